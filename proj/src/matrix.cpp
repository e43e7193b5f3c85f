#include "hvpl/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace hvpl {

Matrix matmul(const Matrix& a, const Matrix& b) {
    check_shape(a.cols() == b.rows(), "matmul: inner dims " + std::to_string(a.cols()) + " vs " +
                                          std::to_string(b.rows()));
    Matrix c(a.rows(), b.cols());
    const int n = a.rows(), k = a.cols(), m = b.cols();
    for (int i = 0; i < n; ++i) {
        const double* ar = a.row(i);
        double* cr = c.row(i);
        for (int p = 0; p < k; ++p) {
            const double av = ar[p];
            const double* br = b.row(p);
            for (int j = 0; j < m; ++j) cr[j] += av * br[j];
        }
    }
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    check_shape(a.cols() == b.cols(), "matmul_nt: inner dims mismatch");
    Matrix c(a.rows(), b.rows());
    const int k = a.cols();
    for (int i = 0; i < a.rows(); ++i) {
        const double* ar = a.row(i);
        double* cr = c.row(i);
        for (int j = 0; j < b.rows(); ++j) {
            const double* br = b.row(j);
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += ar[p] * br[p];
            cr[j] = acc;
        }
    }
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    check_shape(a.rows() == b.rows(), "matmul_tn: inner dims mismatch");
    Matrix c(a.cols(), b.cols());
    const int m = b.cols();
    for (int p = 0; p < a.rows(); ++p) {
        const double* ar = a.row(p);
        const double* br = b.row(p);
        for (int i = 0; i < a.cols(); ++i) {
            const double av = ar[i];
            if (av == 0.0) continue;
            double* cr = c.row(i);
            for (int j = 0; j < m; ++j) cr[j] += av * br[j];
        }
    }
    return c;
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
    check_shape(a.same_shape(b), "add: shape mismatch");
    Matrix c = a;
    for (size_t i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];
    return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    check_shape(a.same_shape(b), "sub: shape mismatch");
    Matrix c = a;
    for (size_t i = 0; i < c.size(); ++i) c.data()[i] -= b.data()[i];
    return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    check_shape(a.same_shape(b), "hadamard: shape mismatch");
    Matrix c = a;
    for (size_t i = 0; i < c.size(); ++i) c.data()[i] *= b.data()[i];
    return c;
}

Matrix scale(const Matrix& a, double s) {
    Matrix c = a;
    for (size_t i = 0; i < c.size(); ++i) c.data()[i] *= s;
    return c;
}

Matrix softmax_rows(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (int i = 0; i < m.rows(); ++i) {
        const double* r = m.row(i);
        double* o = out.row(i);
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < m.cols(); ++j) mx = std::max(mx, r[j]);
        double sum = 0.0;
        for (int j = 0; j < m.cols(); ++j) {
            o[j] = std::exp(r[j] - mx);
            sum += o[j];
        }
        for (int j = 0; j < m.cols(); ++j) o[j] /= sum;
    }
    return out;
}

Matrix layer_norm_rows(const Matrix& m, double eps) {
    Matrix out(m.rows(), m.cols());
    const int d = m.cols();
    for (int i = 0; i < m.rows(); ++i) {
        const double* r = m.row(i);
        double* o = out.row(i);
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += r[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double dx = r[j] - mean;
            var += dx * dx;
        }
        var /= d;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < d; ++j) o[j] = (r[j] - mean) * inv;
    }
    return out;
}

Matrix silu(const Matrix& m) {
    Matrix out = m;
    for (size_t i = 0; i < out.size(); ++i) {
        const double x = out.data()[i];
        out.data()[i] = x / (1.0 + std::exp(-x));
    }
    return out;
}

Matrix depthwise_conv1d(const Matrix& x, const Matrix& kernel, const Matrix& bias) {
    check_shape(kernel.cols() == x.cols(), "depthwise_conv1d: channel count mismatch");
    check_shape(bias.rows() == 1 && bias.cols() == x.cols(), "depthwise_conv1d: bias must be 1 x D");
    const int n = x.rows(), d = x.cols(), k = kernel.rows();
    const int pad = conv1d_pad_left(k);
    Matrix out(n, d);
    for (int i = 0; i < n; ++i) {
        double* o = out.row(i);
        for (int t = 0; t < k; ++t) {
            const int src = i - pad + t;
            if (src < 0 || src >= n) continue;
            const double* xr = x.row(src);
            const double* kr = kernel.row(t);
            for (int j = 0; j < d; ++j) o[j] += kr[j] * xr[j];
        }
        const double* br = bias.row(0);
        for (int j = 0; j < d; ++j) o[j] += br[j];
    }
    return out;
}

Matrix concat_rows(const std::vector<Matrix>& parts) {
    check_shape(!parts.empty(), "concat_rows: empty input");
    int rows = 0;
    const int cols = parts[0].cols();
    for (const auto& p : parts) {
        check_shape(p.cols() == cols, "concat_rows: column mismatch");
        rows += p.rows();
    }
    Matrix out(rows, cols);
    int r = 0;
    for (const auto& p : parts) {
        std::memcpy(out.row(r), p.data(), p.size() * sizeof(double));
        r += p.rows();
    }
    return out;
}

double frobenius_norm(const Matrix& m) {
    double s = 0.0;
    for (size_t i = 0; i < m.size(); ++i) s += m.data()[i] * m.data()[i];
    return std::sqrt(s);
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    check_shape(a.same_shape(b), "max_abs_diff: shape mismatch");
    double mx = 0.0;
    for (size_t i = 0; i < a.size(); ++i) mx = std::max(mx, std::fabs(a.data()[i] - b.data()[i]));
    return mx;
}

bool is_finite(const Matrix& m) {
    for (size_t i = 0; i < m.size(); ++i)
        if (!std::isfinite(m.data()[i])) return false;
    return true;
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) return false;
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace hvpl
