#include "hvpl/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hvpl {

namespace {

// Column views into a row-major matrix are strided; work on a transposed copy
// so every Jacobi rotation touches contiguous memory.
struct ColMajor {
    int m = 0, n = 0;
    std::vector<double> cols;  // column j at cols[j*m .. j*m+m)

    explicit ColMajor(const Matrix& a) : m(a.rows()), n(a.cols()), cols(a.size()) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) cols[static_cast<size_t>(j) * m + i] = a(i, j);
    }
    double* col(int j) { return cols.data() + static_cast<size_t>(j) * m; }
};

double dot(const double* a, const double* b, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

void rotate(double* ci, double* cj, int n, double c, double s) {
    for (int k = 0; k < n; ++k) {
        const double xi = ci[k], xj = cj[k];
        ci[k] = c * xi - s * xj;
        cj[k] = s * xi + c * xj;
    }
}

}  // namespace

SvdResult svd(const Matrix& a, bool full_v, int max_sweeps, double tol) {
    const int m = a.rows(), n = a.cols();
    check_shape(m > 0 && n > 0, "svd: empty matrix");

    ColMajor work(a);
    ColMajor vacc(Matrix::identity(n));

    // Columns that collapse to roundoff level during orthogonalization would
    // otherwise churn forever under the relative criterion; treat them as
    // exact zeros of the (numerically) rank-deficient input.
    double scale0 = 0.0;
    for (int j = 0; j < n; ++j) scale0 = std::max(scale0, dot(work.col(j), work.col(j), m));
    const double zero2 = scale0 * 1e-28;

    int sweep = 0;
    for (; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (int i = 0; i < n - 1; ++i) {
            for (int j = i + 1; j < n; ++j) {
                double* ci = work.col(i);
                double* cj = work.col(j);
                const double p = dot(ci, cj, m);
                const double qi = dot(ci, ci, m);
                const double qj = dot(cj, cj, m);
                if (qi <= zero2 || qj <= zero2) continue;
                if (std::fabs(p) <= tol * std::sqrt(qi * qj)) continue;
                rotated = true;
                const double tau = (qj - qi) / (2.0 * p);
                const double t = (tau >= 0 ? 1.0 : -1.0) / (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                rotate(ci, cj, m, c, s);
                rotate(vacc.col(i), vacc.col(j), n, c, s);
            }
        }
        if (!rotated) break;
    }
    if (sweep == max_sweeps)
        throw NumericError("svd: no convergence after " + std::to_string(max_sweeps) + " sweeps");

    // Singular values are the column norms; sort descending.
    std::vector<double> sigma(n);
    for (int j = 0; j < n; ++j) sigma[j] = std::sqrt(dot(work.col(j), work.col(j), m));
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return sigma[x] > sigma[y]; });

    const int k = std::min(m, n);
    SvdResult res;
    res.s.resize(k);
    res.u = Matrix(m, k);
    res.v = Matrix(n, full_v ? n : k);

    const int vcols = res.v.cols();
    for (int out = 0; out < vcols; ++out) {
        const int src = order[out];
        for (int r = 0; r < n; ++r) res.v(r, out) = vacc.col(src)[r];
    }

    for (int out = 0; out < k; ++out) {
        const int src = order[out];
        res.s[out] = sigma[src];
        if (sigma[src] > 0.0) {
            const double inv = 1.0 / sigma[src];
            for (int r = 0; r < m; ++r) res.u(r, out) = work.col(src)[r] * inv;
        }
    }
    // Columns of U tied to zero singular values are arbitrary; complete them
    // to an orthonormal set with Gram-Schmidt over the standard basis.
    for (int out = 0; out < k; ++out) {
        if (res.s[out] > 0.0) continue;
        for (int cand = 0; cand < m; ++cand) {
            std::vector<double> e(m, 0.0);
            e[cand] = 1.0;
            for (int prev = 0; prev < k; ++prev) {
                if (prev == out) continue;
                double proj = 0.0;
                for (int r = 0; r < m; ++r) proj += e[r] * res.u(r, prev);
                for (int r = 0; r < m; ++r) e[r] -= proj * res.u(r, prev);
            }
            double nrm = 0.0;
            for (double x : e) nrm += x * x;
            nrm = std::sqrt(nrm);
            if (nrm > 1e-6) {
                for (int r = 0; r < m; ++r) res.u(r, out) = e[r] / nrm;
                break;
            }
        }
    }
    return res;
}

PcaResult pca_reduce(const Matrix& rows, int k) {
    check_shape(k >= 0 && k <= rows.cols(), "pca_reduce: k exceeds feature dimension");
    check_shape(rows.rows() >= 2, "pca_reduce: need at least two rows");

    PcaResult res;
    res.mean = Matrix(1, rows.cols());
    for (int j = 0; j < rows.cols(); ++j) {
        double s = 0.0;
        for (int i = 0; i < rows.rows(); ++i) s += rows(i, j);
        res.mean(0, j) = s / rows.rows();
    }
    Matrix centered = rows;
    for (int i = 0; i < centered.rows(); ++i)
        for (int j = 0; j < centered.cols(); ++j) centered(i, j) -= res.mean(0, j);

    SvdResult dec = svd(centered);
    res.singular_values = dec.s;
    res.basis = Matrix(rows.cols(), k);
    for (int j = 0; j < k; ++j)
        for (int r = 0; r < rows.cols(); ++r) res.basis(r, j) = dec.v(r, j);
    res.reduced = matmul(centered, res.basis);
    return res;
}

int numerical_rank(const std::vector<double>& s, double rel_tol) {
    if (s.empty()) return 0;
    const double cut = rel_tol * s.front();
    int r = 0;
    for (double x : s)
        if (x > cut) ++r;
    return r;
}

}  // namespace hvpl
