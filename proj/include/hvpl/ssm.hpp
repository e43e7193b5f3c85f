#pragma once

#include <memory>
#include <string>
#include <vector>

#include "hvpl/graph.hpp"
#include "hvpl/matrix.hpp"
#include "hvpl/tape.hpp"
#include "hvpl/tree.hpp"

namespace hvpl {

// --- explicit-parameter surface (oracle-friendly) ---------------------------

struct ZohDiscrete {
    std::vector<double> abar;  // exp(delta * a), elementwise on the diagonal
    Matrix bbar;               // (exp(delta*a) - 1) / a scaling B's rows
};

// Zero-order-hold discretization for a diagonal state matrix A = diag(a).
// Requires every a entry < 0 and delta > 0; throws ParameterizationError.
ZohDiscrete discretize(const std::vector<double>& a_diag, double delta, const Matrix& b);

// Per-position SSM parameters spelled out as explicit matrices. The tape path
// uses a factored parameterization of the same quantities; this form exists
// for reference math and the fast-vs-brute-force equivalence checks.
struct ExplicitSsm {
    std::vector<double> a;        // Q diagonal entries, strictly negative
    std::vector<double> delta;    // per position, > 0
    std::vector<Matrix> b;        // per position Q x D
    std::vector<Matrix> c;        // per position D x Q
    std::vector<double> d_skip;   // per channel
};

// Quadratic-time hidden states: H_j = sum_k Omega(j,k) * Bbar_k X_k with the
// path product over edge factors, each edge contributing the abar of its
// child endpoint. Walks the tree once per source vertex.
Matrix gt_ssm_bruteforce(const Matrix& x, const ExplicitSsm& p, const SpanningTree& tree);

// Linear-time equivalent via the two-pass traversal.
Matrix gt_ssm_fast(const Matrix& x, const ExplicitSsm& p, const SpanningTree& tree);

// Y_j = C_j H_j + d ⊙ X_j.
Matrix ssm_output(const Matrix& h, const ExplicitSsm& p, const Matrix& x);

// --- GSS layer (recorded on the tape) ---------------------------------------

// Gated two-branch block: the right branch projects, depthwise-convolves and
// SiLUs the input, feeds the graph-traversal SSM; the left branch is a gated
// SiLU projection; their product (after layer norm) goes through w_p.
struct GssWeights {
    Matrix w_in_right, b_in_right;  // D x D, 1 x D
    Matrix conv_kernel, conv_bias;  // K x D, 1 x D (depthwise, kernel size 4)
    Matrix w_in_left, b_in_left;    // D x D, 1 x D
    Matrix w_delta, b_delta;        // D x 1, 1 x 1
    Matrix a_log;                   // 1 x Q; A = -exp(a_log)
    Matrix w_b;                     // D x Q selective state drive
    Matrix r_map;                   // D x 1 shared input row map
    Matrix w_c;                     // D x Q selective readout
    Matrix u_c;                     // Q x D shared readout map
    Matrix d_skip;                  // 1 x D per-channel skip
    Matrix w_p;                     // D x D output projection

    static GssWeights init(int d, int q, uint64_t seed, const std::string& label);
    std::vector<Matrix*> all();
    std::vector<const Matrix*> all() const;
};

struct GssVars {
    Var w_in_right, b_in_right, conv_kernel, conv_bias, w_in_left, b_in_left;
    Var w_delta, b_delta, a_log, w_b, r_map, w_c, u_c, d_skip, w_p;
    std::vector<Var> list() const {
        return {w_in_right, b_in_right, conv_kernel, conv_bias, w_in_left, b_in_left,
                w_delta,    b_delta,    a_log,       w_b,       r_map,     w_c,
                u_c,        d_skip,     w_p};
    }
};

GssVars push_gss(Tape& t, const GssWeights& w, bool trainable);

struct GssLayerOut {
    Var z_next;
    std::shared_ptr<const SpanningTree> tree;
};

GssLayerOut gss_layer(Tape& t, Var z_prev, const GssVars& w, int knn_phi, bool residual);

constexpr int kConvKernel = 4;

}  // namespace hvpl
