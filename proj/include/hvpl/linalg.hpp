#pragma once

#include <vector>

#include "hvpl/matrix.hpp"

namespace hvpl {

struct SvdResult {
    Matrix u;                // m x k (k = min(m, n)) with orthonormal columns
    std::vector<double> s;   // k singular values, descending
    Matrix v;                // n x k, or n x n when full_v was requested
};

// One-sided (Hestenes) Jacobi SVD. Accurate and simple for the small dense
// matrices this codebase works with (<= a few hundred per side). When full_v
// is set the returned V is n x n: the trailing columns form an orthonormal
// basis of the null space, which the gradient-projection split needs.
// Throws NumericError if the sweep cap is exceeded.
SvdResult svd(const Matrix& m, bool full_v = false, int max_sweeps = 100, double tol = 1e-12);

struct PcaResult {
    Matrix reduced;   // n x k scores
    Matrix basis;     // d x k orthonormal principal directions
    Matrix mean;      // 1 x d row mean
    std::vector<double> singular_values;  // of the centered data
};

// Centers rows and projects onto the top-k principal directions via SVD of
// the centered data. Requires k <= cols and at least two rows.
PcaResult pca_reduce(const Matrix& rows, int k);

int numerical_rank(const std::vector<double>& singular_values, double rel_tol = 1e-8);

}  // namespace hvpl
