#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "hvpl/linalg.hpp"
#include "hvpl/matio.hpp"
#include "hvpl/matrix.hpp"
#include "hvpl/rng.hpp"
#include "hvpl/tape.hpp"
#include "test_support.hpp"

using namespace hvpl;
using namespace hvpl::testing;

namespace {

// Triple-loop reference product, independent of the production kernel.
Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (int k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    return c;
}

}  // namespace

TEST_CASE("matmul identity and zero") {
    Rng rng(7, "test/matmul");
    Matrix m = random_matrix(rng, 3, 3);
    CHECK(max_abs_diff(matmul(Matrix::identity(3), m), m) == 0.0);

    Matrix a = Matrix::from_rows(2, 2, {1, 2, 3, 4});
    Matrix z(2, 2);
    CHECK(frobenius_norm(matmul(a, z)) == 0.0);
}

TEST_CASE("matmul matches triple-loop reference") {
    Rng rng(11, "test/matmul/ref");
    Matrix a = random_matrix(rng, 5, 7);
    Matrix b = random_matrix(rng, 7, 3);
    CHECK(max_abs_diff(matmul(a, b), naive_matmul(a, b)) < 1e-12);
}

TEST_CASE("matmul associativity on random conformable triples") {
    for (int trial = 0; trial < 20; ++trial) {
        Rng rng(100 + trial, "test/assoc");
        Matrix a = random_matrix(rng, 4, 6);
        Matrix b = random_matrix(rng, 6, 5);
        Matrix c = random_matrix(rng, 5, 3);
        Matrix lhs = matmul(matmul(a, b), c);
        Matrix rhs = matmul(a, matmul(b, c));
        CHECK(max_abs_diff(lhs, rhs) / std::max(1.0, frobenius_norm(lhs)) < 1e-10);
    }
}

TEST_CASE("matmul shape error") {
    CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
}

TEST_CASE("softmax_rows basics") {
    Matrix equal = Matrix::filled(1, 4, 2.5);
    Matrix s = softmax_rows(equal);
    for (int j = 0; j < 4; ++j) CHECK(s(0, j) == doctest::Approx(0.25).epsilon(1e-12));

    Matrix two = Matrix::from_rows(1, 2, {0.0, std::log(3.0)});
    Matrix t = softmax_rows(two);
    CHECK(t(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(t(0, 1) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and shift invariance") {
    for (int trial = 0; trial < 25; ++trial) {
        Rng rng(trial, "test/softmax");
        Matrix m = random_matrix(rng, 3, 6, 4.0);
        Matrix s = softmax_rows(m);
        for (int i = 0; i < s.rows(); ++i) {
            double sum = 0.0;
            for (int j = 0; j < s.cols(); ++j) sum += s(i, j);
            CHECK(std::fabs(sum - 1.0) <= 1e-12);
        }
        Matrix shifted = m;
        const double c = rng.normal() * 50.0;
        for (int i = 0; i < m.rows(); ++i)
            for (int j = 0; j < m.cols(); ++j) shifted(i, j) += c;
        CHECK(max_abs_diff(softmax_rows(shifted), s) <= 1e-12);
    }
}

TEST_CASE("svd identity and diagonal") {
    SvdResult r = svd(Matrix::identity(4));
    for (double s : r.s) CHECK(s == doctest::Approx(1.0).epsilon(1e-12));

    Matrix d(3, 3);
    d(0, 0) = 3;
    d(1, 1) = 2;
    d(2, 2) = 1;
    SvdResult rd = svd(d);
    CHECK(rd.s[0] == doctest::Approx(3.0));
    CHECK(rd.s[1] == doctest::Approx(2.0));
    CHECK(rd.s[2] == doctest::Approx(1.0));
}

TEST_CASE("svd reconstruction, orthonormality, descending order") {
    for (int trial = 0; trial < 10; ++trial) {
        Rng rng(trial, "test/svd");
        const int m = 6, n = 4;
        Matrix a = random_matrix(rng, m, n);
        SvdResult r = svd(a);

        // Reconstruction
        Matrix us(m, n);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) us(i, j) = r.u(i, j) * r.s[j];
        Matrix rec = matmul_nt(us, r.v);
        CHECK(frobenius_norm(sub(rec, a)) <= 1e-8 * frobenius_norm(a));

        // Orthonormal columns
        Matrix utu = matmul_tn(r.u, r.u);
        Matrix vtv = matmul_tn(r.v, r.v);
        CHECK(max_abs_diff(utu, Matrix::identity(n)) <= 1e-10);
        CHECK(max_abs_diff(vtv, Matrix::identity(n)) <= 1e-10);

        for (size_t i = 1; i < r.s.size(); ++i) CHECK(r.s[i - 1] >= r.s[i]);
        for (double s : r.s) CHECK(s >= 0.0);
    }
}

TEST_CASE("svd full_v spans the null space") {
    Rng rng(5, "test/svd/full");
    Matrix g1 = random_matrix(rng, 8, 3);
    Matrix g2 = random_matrix(rng, 3, 6);
    Matrix a = matmul(g1, g2);  // rank 3, 8 x 6
    SvdResult r = svd(a, /*full_v=*/true);
    CHECK(r.v.cols() == 6);
    Matrix vtv = matmul_tn(r.v, r.v);
    CHECK(max_abs_diff(vtv, Matrix::identity(6)) <= 1e-10);
    // Columns beyond the rank annihilate A.
    for (int j = 3; j < 6; ++j) {
        double norm = 0.0;
        for (int i = 0; i < a.rows(); ++i) {
            double s = 0.0;
            for (int k = 0; k < 6; ++k) s += a(i, k) * r.v(k, j);
            norm += s * s;
        }
        CHECK(std::sqrt(norm) <= 1e-8 * frobenius_norm(a));
    }
}

TEST_CASE("pca on a line captures all variance") {
    Rng rng(3, "test/pca/line");
    Matrix pts(12, 3);
    const double dir[3] = {1.0, -2.0, 0.5};
    for (int i = 0; i < 12; ++i) {
        const double t = rng.normal();
        for (int j = 0; j < 3; ++j) pts(i, j) = t * dir[j] + 7.0;
    }
    PcaResult p = pca_reduce(pts, 1);
    double total = 0.0, top = p.singular_values[0] * p.singular_values[0];
    for (double s : p.singular_values) total += s * s;
    CHECK(top / total >= 0.99999);
}

TEST_CASE("pca full-rank round trip") {
    Rng rng(4, "test/pca/full");
    Matrix pts = random_matrix(rng, 9, 5);
    PcaResult p = pca_reduce(pts, 5);
    Matrix rec = matmul_nt(p.reduced, p.basis);
    for (int i = 0; i < rec.rows(); ++i)
        for (int j = 0; j < rec.cols(); ++j) rec(i, j) += p.mean(0, j);
    CHECK(max_abs_diff(rec, pts) <= 1e-8);
}

TEST_CASE("pca explained variance equals top-k singular mass") {
    Rng rng(6, "test/pca/var");
    Matrix pts = random_matrix(rng, 20, 8);
    PcaResult p = pca_reduce(pts, 2);
    // Variance captured by the scores vs top-2 squared singular values.
    double captured = 0.0;
    for (size_t i = 0; i < p.reduced.size(); ++i) captured += p.reduced.data()[i] * p.reduced.data()[i];
    const double expect =
        p.singular_values[0] * p.singular_values[0] + p.singular_values[1] * p.singular_values[1];
    CHECK(captured == doctest::Approx(expect).epsilon(1e-10));
    CHECK_THROWS_AS(pca_reduce(pts, 9), ShapeError);
}

TEST_CASE("layer_norm rows have mean 0 and unit variance") {
    Rng rng(8, "test/ln");
    Matrix m = random_matrix(rng, 5, 16, 3.0);
    Matrix out = layer_norm_rows(m);
    for (int i = 0; i < out.rows(); ++i) {
        double mean = 0.0, var = 0.0;
        for (int j = 0; j < out.cols(); ++j) mean += out(i, j);
        mean /= out.cols();
        for (int j = 0; j < out.cols(); ++j) var += (out(i, j) - mean) * (out(i, j) - mean);
        var /= out.cols();
        CHECK(std::fabs(mean) < 1e-9);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("depthwise conv matches direct evaluation") {
    Rng rng(9, "test/conv");
    Matrix x = random_matrix(rng, 7, 3);
    Matrix k = random_matrix(rng, 4, 3);
    Matrix b = random_matrix(rng, 1, 3);
    Matrix out = depthwise_conv1d(x, k, b);
    const int pad = conv1d_pad_left(4);
    for (int i = 0; i < 7; ++i)
        for (int c = 0; c < 3; ++c) {
            double s = b(0, c);
            for (int t = 0; t < 4; ++t) {
                const int src = i - pad + t;
                if (src >= 0 && src < 7) s += k(t, c) * x(src, c);
            }
            CHECK(out(i, c) == doctest::Approx(s).epsilon(1e-12));
        }
}

TEST_CASE("hvpl-mat round trip is bit exact") {
    Rng rng(10, "test/matio");
    Matrix m = random_matrix(rng, 4, 6);
    std::stringstream buf;
    write_record(buf, m, MatDType::F64);
    MatRecord rec = read_record(buf);
    CHECK(bitwise_equal(rec.as_matrix(), m));

    // f32 storage: identical after one widen/narrow cycle.
    std::stringstream b32;
    write_record(b32, m, MatDType::F32);
    Matrix m32 = read_record(b32).as_matrix();
    std::stringstream b32b;
    write_record(b32b, m32, MatDType::F32);
    CHECK(bitwise_equal(read_record(b32b).as_matrix(), m32));
}

TEST_CASE("hvpl-mat rejects corrupt input") {
    std::stringstream buf("NOTMAGIC________");
    CHECK_THROWS_AS(read_record(buf), IoError);
    std::stringstream trunc;
    trunc.write("HVPLMAT1", 8);
    CHECK_THROWS_AS(read_record(trunc), IoError);
}

TEST_CASE("tape: loss = sum(P) gives all-ones gradient") {
    Tape t;
    Var p = t.param(Matrix::filled(3, 4, 2.0));
    Var loss = t.sum_all(p);
    t.backward(loss);
    CHECK(max_abs_diff(t.grad(p), Matrix::filled(3, 4, 1.0)) == 0.0);
}

TEST_CASE("tape: loss = |P|^2/2 gives gradient P") {
    Rng rng(12, "test/tape/quad");
    Matrix pv = random_matrix(rng, 3, 3);
    Tape t;
    Var p = t.param(pv);
    Var loss = t.scale(t.sum_all(t.mul(p, p)), 0.5);
    t.backward(loss);
    CHECK(max_abs_diff(t.grad(p), pv) < 1e-12);
}

TEST_CASE("tape: loss must be scalar") {
    Tape t;
    Var p = t.param(Matrix::filled(2, 2, 1.0));
    CHECK_THROWS_AS(t.backward(p), UsageError);
}

TEST_CASE("tape: non-parameter gradients are not retained") {
    Tape t;
    Var c = t.constant(Matrix::filled(2, 2, 1.0));
    Var p = t.param(Matrix::filled(2, 2, 2.0));
    Var loss = t.sum_all(t.mul(c, p));
    t.backward(loss);
    CHECK_THROWS_AS(t.grad(c), UsageError);
    CHECK(max_abs_diff(t.grad(p), Matrix::filled(2, 2, 1.0)) == 0.0);
}

namespace {

// FD check for one recorded op: builds loss = sum(op(inputs) .* W) with W a
// fixed random weight so every output entry contributes.
void check_op_gradients(const char* name,
                        const std::function<Var(Tape&, const std::vector<Var>&)>& build,
                        const std::vector<std::pair<int, int>>& shapes, int trials,
                        double sigma = 1.0, double tol = 1e-5) {
    for (int trial = 0; trial < trials; ++trial) {
        Rng rng(777 + trial, std::string("test/fd/") + name);
        std::vector<Matrix> inputs;
        for (auto [r, c] : shapes) inputs.push_back(rng.normal_matrix(r, c, sigma));

        Matrix weight;
        auto eval = [&](const std::vector<Matrix>& in) {
            Tape t;
            std::vector<Var> vars;
            for (const auto& m : in) vars.push_back(t.param(m));
            Var out = build(t, vars);
            if (weight.empty()) {
                Rng wr(55, std::string("test/fd/w/") + name);
                weight = wr.normal_matrix(t.val(out).rows(), t.val(out).cols(), 1.0);
            }
            Var w = t.constant(weight);
            return t.val(t.sum_all(t.mul(out, w)))(0, 0);
        };
        eval(inputs);  // fixes the weight shape

        Tape t;
        std::vector<Var> vars;
        for (const auto& m : inputs) vars.push_back(t.param(m));
        Var out = build(t, vars);
        Var w = t.constant(weight);
        Var loss = t.sum_all(t.mul(out, w));
        t.backward(loss);

        const auto fd = fd_gradients(eval, inputs);
        for (size_t p = 0; p < inputs.size(); ++p) {
            const double err = max_rel_err(t.grad(vars[p]), fd[p], 1e-4);
            INFO(name, " input ", p, " trial ", trial);
            CHECK(err < tol);
        }
        weight = Matrix();
    }
}

}  // namespace

TEST_CASE("tape gradient fidelity vs central finite differences") {
    const int trials = 50;
    check_op_gradients("matmul",
                       [](Tape& t, const std::vector<Var>& v) { return t.matmul(v[0], v[1]); },
                       {{3, 4}, {4, 2}}, trials);
    check_op_gradients("matmul_nt",
                       [](Tape& t, const std::vector<Var>& v) { return t.matmul_nt(v[0], v[1]); },
                       {{3, 4}, {2, 4}}, trials);
    check_op_gradients("add", [](Tape& t, const std::vector<Var>& v) { return t.add(v[0], v[1]); },
                       {{3, 3}, {3, 3}}, trials);
    check_op_gradients("sub", [](Tape& t, const std::vector<Var>& v) { return t.sub(v[0], v[1]); },
                       {{3, 3}, {3, 3}}, trials);
    check_op_gradients("mul", [](Tape& t, const std::vector<Var>& v) { return t.mul(v[0], v[1]); },
                       {{3, 3}, {3, 3}}, trials);
    check_op_gradients("scale", [](Tape& t, const std::vector<Var>& v) { return t.scale(v[0], -1.7); },
                       {{3, 3}}, trials);
    check_op_gradients("add_row",
                       [](Tape& t, const std::vector<Var>& v) { return t.add_row(v[0], v[1]); },
                       {{4, 3}, {1, 3}}, trials);
    check_op_gradients("mul_row",
                       [](Tape& t, const std::vector<Var>& v) { return t.mul_row(v[0], v[1]); },
                       {{4, 3}, {1, 3}}, trials);
    check_op_gradients("mul_col",
                       [](Tape& t, const std::vector<Var>& v) { return t.mul_col(v[0], v[1]); },
                       {{4, 3}, {4, 1}}, trials);
    check_op_gradients("exp", [](Tape& t, const std::vector<Var>& v) { return t.exp(v[0]); },
                       {{3, 3}}, trials, 0.5);
    check_op_gradients("softplus", [](Tape& t, const std::vector<Var>& v) { return t.softplus(v[0]); },
                       {{3, 3}}, trials);
    check_op_gradients("silu", [](Tape& t, const std::vector<Var>& v) { return t.silu(v[0]); },
                       {{3, 3}}, trials);
    check_op_gradients("reciprocal",
                       [](Tape& t, const std::vector<Var>& v) {
                           return t.reciprocal(t.add_scalar(t.mul(v[0], v[0]), 1.0));
                       },
                       {{3, 3}}, trials);
    check_op_gradients("softmax",
                       [](Tape& t, const std::vector<Var>& v) { return t.softmax_rows(v[0]); },
                       {{3, 5}}, trials);
    check_op_gradients("layer_norm",
                       [](Tape& t, const std::vector<Var>& v) { return t.layer_norm_rows(v[0]); },
                       {{3, 8}}, trials);
    check_op_gradients("dwconv",
                       [](Tape& t, const std::vector<Var>& v) { return t.dwconv1d(v[0], v[1], v[2]); },
                       {{6, 3}, {4, 3}, {1, 3}}, trials);
    check_op_gradients("concat_slice",
                       [](Tape& t, const std::vector<Var>& v) {
                           Var cat = t.concat_rows({v[0], v[1]});
                           Var cc = t.concat_cols({cat, cat});
                           return t.slice_cols(t.slice_rows(cc, 1, 5), 0, 4);
                       },
                       {{3, 3}, {3, 3}}, trials);
}
