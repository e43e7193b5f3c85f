#pragma once

#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "hvpl/detector.hpp"
#include "hvpl/graph.hpp"
#include "hvpl/matrix.hpp"
#include "hvpl/ssm.hpp"

// Independent reference implementations used to verify the production paths.
// Everything here is written straight-line from the defining formulas and
// must stay decoupled from the implementations it checks.
namespace hvpl::oracles {

Matrix naive_matmul(const Matrix& a, const Matrix& b);

// Single-head attention scores computed directly: softmax(P Wq (F Wk)^T / sqrt(d))
// with the head's column block of packed D x D projections.
Matrix attention_scores_reference(const Matrix& prompts, const Matrix& feats, const Matrix& wq,
                                  const Matrix& wk, int head, int n_heads);

// All-pairs phi-nearest-neighbor edge set (union-symmetrized), same
// tie-breaking contract as the production builder but derived independently.
std::set<std::pair<int, int>> knn_edges_reference(const Matrix& x, int phi);

struct MstReference {
    std::vector<std::tuple<int, int, double>> edges;  // canonical (u, v, w), sorted
    double total = 0.0;
};
MstReference kruskal_mst(const SequenceGraph& g);

// Exhaustive minimum-cost assignment over all injections of rows into
// columns (factorial; fixtures keep it tiny). Returns per-row column or -1.
std::vector<int> exhaustive_assignment(const Matrix& cost);

// Multi-head attention layer evaluated straight from its definition:
// per head softmax(P Wq_h (F Wk_h)^T / sqrt(d)) (F Wv_h), heads concatenated,
// projected by Wo, residual to P, then out = msa + mlp(msa).
struct MsaReferenceWeights {
    Matrix wq, wk, wv, wo;       // D x D packed heads
    Matrix mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    int n_heads = 0;
};
Matrix msa_layer_reference(const Matrix& p_vid, const Matrix& f_prev,
                           const MsaReferenceWeights& w);

// Straight-line composition of the gated state-space block from the named
// public sub-operations (explicit-parameter form).
Matrix gss_layer_reference(const Matrix& z_prev, const GssWeights& w, int knn_phi, bool residual);

}  // namespace hvpl::oracles
