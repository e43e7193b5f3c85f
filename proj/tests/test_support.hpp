#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "hvpl/matrix.hpp"
#include "hvpl/rng.hpp"
#include "hvpl/tape.hpp"

namespace hvpl::testing {

// Central finite differences of a scalar function of several matrix inputs.
// eval() must be a pure function of the inputs (fresh tape per call).
inline std::vector<Matrix> fd_gradients(
    const std::function<double(const std::vector<Matrix>&)>& eval, std::vector<Matrix> inputs,
    double step = 1e-6) {
    std::vector<Matrix> grads;
    for (size_t p = 0; p < inputs.size(); ++p) {
        Matrix g(inputs[p].rows(), inputs[p].cols());
        for (size_t i = 0; i < inputs[p].size(); ++i) {
            const double orig = inputs[p].data()[i];
            inputs[p].data()[i] = orig + step;
            const double hi = eval(inputs);
            inputs[p].data()[i] = orig - step;
            const double lo = eval(inputs);
            inputs[p].data()[i] = orig;
            g.data()[i] = (hi - lo) / (2.0 * step);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

// Relative agreement with a floor so near-zero derivative pairs compare on an
// absolute scale.
inline double rel_err(double a, double b, double floor = 1e-8) {
    const double denom = std::max({std::fabs(a), std::fabs(b), floor});
    return std::fabs(a - b) / denom;
}

inline double max_rel_err(const Matrix& a, const Matrix& b, double floor = 1e-8) {
    double mx = 0.0;
    for (size_t i = 0; i < a.size(); ++i) mx = std::max(mx, rel_err(a.data()[i], b.data()[i], floor));
    return mx;
}

inline Matrix random_matrix(Rng& rng, int rows, int cols, double sigma = 1.0) {
    return rng.normal_matrix(rows, cols, sigma);
}

}  // namespace hvpl::testing
