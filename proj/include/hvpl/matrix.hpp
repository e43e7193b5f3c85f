#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "hvpl/errors.hpp"

namespace hvpl {

// Dense row-major matrix of 64-bit floats. All computation happens in f64;
// 32-bit floats appear only in the persistence layer.
class Matrix {
public:
    Matrix() = default;
    Matrix(int rows, int cols) : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, 0.0) {
        check_shape(rows >= 0 && cols >= 0, "Matrix dims must be non-negative");
    }

    static Matrix filled(int rows, int cols, double v) {
        Matrix m(rows, cols);
        for (auto& x : m.data_) x = v;
        return m;
    }
    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
    static Matrix from_rows(int rows, int cols, std::vector<double> data) {
        check_shape(static_cast<size_t>(rows) * cols == data.size(), "Matrix::from_rows size mismatch");
        Matrix m;
        m.rows_ = rows;
        m.cols_ = cols;
        m.data_ = std::move(data);
        return m;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
    double operator()(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }

    double* row(int r) { return data_.data() + static_cast<size_t>(r) * cols_; }
    const double* row(int r) const { return data_.data() + static_cast<size_t>(r) * cols_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    const std::vector<double>& storage() const { return data_; }
    std::vector<double>& storage() { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

// Rank-3 tensor, row-major over (d0, d1, d2).
class Tensor3 {
public:
    Tensor3() = default;
    Tensor3(int d0, int d1, int d2)
        : d0_(d0), d1_(d1), d2_(d2), data_(static_cast<size_t>(d0) * d1 * d2, 0.0) {
        check_shape(d0 >= 0 && d1 >= 0 && d2 >= 0, "Tensor3 dims must be non-negative");
    }

    int d0() const { return d0_; }
    int d1() const { return d1_; }
    int d2() const { return d2_; }
    size_t size() const { return data_.size(); }

    double& operator()(int i, int j, int k) {
        return data_[(static_cast<size_t>(i) * d1_ + j) * d2_ + k];
    }
    double operator()(int i, int j, int k) const {
        return data_[(static_cast<size_t>(i) * d1_ + j) * d2_ + k];
    }

    // View of slice i as a d1 x d2 matrix copy.
    Matrix slice(int i) const {
        Matrix m(d1_, d2_);
        const double* src = data_.data() + static_cast<size_t>(i) * d1_ * d2_;
        std::copy(src, src + static_cast<size_t>(d1_) * d2_, m.data());
        return m;
    }
    void set_slice(int i, const Matrix& m) {
        check_shape(m.rows() == d1_ && m.cols() == d2_, "Tensor3::set_slice shape mismatch");
        std::copy(m.data(), m.data() + m.size(), data_.data() + static_cast<size_t>(i) * d1_ * d2_);
    }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    const std::vector<double>& storage() const { return data_; }

private:
    int d0_ = 0, d1_ = 0, d2_ = 0;
    std::vector<double> data_;
};

// --- basic ops -------------------------------------------------------------

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
Matrix softmax_rows(const Matrix& m);
Matrix layer_norm_rows(const Matrix& m, double eps = 1e-12);
Matrix silu(const Matrix& m);
// Depth-wise 1-d convolution along the row (sequence) axis with same padding.
// kernel is K x D (one column per channel), taps at offsets [-pad_left, K-1-pad_left].
Matrix depthwise_conv1d(const Matrix& x, const Matrix& kernel, const Matrix& bias);
Matrix concat_rows(const std::vector<Matrix>& parts);

double frobenius_norm(const Matrix& m);
double max_abs_diff(const Matrix& a, const Matrix& b);
bool is_finite(const Matrix& m);
bool bitwise_equal(const Matrix& a, const Matrix& b);

inline int conv1d_pad_left(int kernel_size) { return (kernel_size - 1) / 2; }

}  // namespace hvpl
