#pragma once

#include <vector>

#include "hvpl/matrix.hpp"
#include "hvpl/tree.hpp"

namespace hvpl {

// Undirected similarity graph over sequence positions. Edges are canonical
// (u < v), weights are 1 - cosine similarity, so they live in [0, 2].
struct SequenceGraph {
    struct Edge {
        int u = 0, v = 0;
        double w = 0.0;
    };
    int n = 0;
    std::vector<Edge> edges;  // sorted by (u, v), no duplicates, no self loops
};

// Symmetrized phi-nearest-neighbor graph under cosine similarity. Ties go to
// the lower vertex index. If the union graph is disconnected, the single best
// cross-component edge is added per merge until it is connected. Throws
// DegenerateInputError on zero-norm rows and UsageError when phi >= n.
SequenceGraph build_knn_graph(const Matrix& x, int phi);

// Minimum spanning tree via contractive Boruvka rounds, rooted at vertex 0.
// Deterministic under lowest-(weight, u, v) tie-breaking. Throws
// ConnectivityError when the input graph is disconnected.
SpanningTree boruvka_mst(const SequenceGraph& g);

// Kahn-style breadth-first topological order (root first, children in index
// order). Exposed separately for property tests; tree_from_parents fills the
// same ordering.
std::vector<int> bto_order(const SpanningTree& tree);

double tree_total_weight(const SequenceGraph& g, const SpanningTree& t);

}  // namespace hvpl
