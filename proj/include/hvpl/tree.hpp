#pragma once

#include <utility>
#include <vector>

#include "hvpl/errors.hpp"
#include "hvpl/matrix.hpp"

namespace hvpl {

// Rooted spanning tree over sequence positions. parent[root] == root and the
// breadth-first topological order (bto) lists every parent before its
// children.
struct SpanningTree {
    int n = 0;
    int root = 0;
    std::vector<int> parent;
    std::vector<std::vector<int>> children;
    std::vector<int> bto;

    std::vector<std::pair<int, int>> edges() const {
        std::vector<std::pair<int, int>> e;
        for (int v = 0; v < n; ++v)
            if (v != root) e.emplace_back(parent[v], v);
        return e;
    }
};

// Builds children lists and the BTO from a parent array; validates that the
// array encodes a single tree rooted at `root`. Throws StructureError on
// cycles or unreachable vertices.
SpanningTree tree_from_parents(std::vector<int> parent, int root);

// Single-node convenience tree.
SpanningTree single_node_tree();

// Two-pass linear-time tree recurrence shared by the pure traversal and the
// recorded tape op. zeta enters holding the per-vertex drive (beta) and
// leaves holding the upward accumulation; h receives the final states.
//   up:   zeta_j += sum_{children s} abar_s * zeta_s      (leaf -> root)
//   down: h_root = zeta_root,
//         h_j = abar_j * (h_parent - abar_j * zeta_j) + zeta_j
void tree_scan_passes(const SpanningTree& tree, const Matrix& abar, Matrix& zeta, Matrix& h);

}  // namespace hvpl
