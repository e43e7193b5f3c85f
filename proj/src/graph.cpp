#include "hvpl/graph.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <queue>
#include <set>

namespace hvpl {

SpanningTree tree_from_parents(std::vector<int> parent, int root) {
    const int n = static_cast<int>(parent.size());
    if (n == 0) throw StructureError("tree_from_parents: empty parent array");
    if (root < 0 || root >= n || parent[root] != root)
        throw StructureError("tree_from_parents: root must map to itself");

    SpanningTree t;
    t.n = n;
    t.root = root;
    t.parent = std::move(parent);
    t.children.assign(n, {});
    for (int v = 0; v < n; ++v) {
        if (v == root) continue;
        if (t.parent[v] < 0 || t.parent[v] >= n)
            throw StructureError("tree_from_parents: parent index out of range");
        t.children[t.parent[v]].push_back(v);
    }
    for (auto& ch : t.children) std::sort(ch.begin(), ch.end());

    // BFS from the root; anything left unvisited means a cycle or a second
    // component hiding in the parent array.
    t.bto.reserve(n);
    std::vector<char> seen(n, 0);
    std::queue<int> q;
    q.push(root);
    seen[root] = 1;
    while (!q.empty()) {
        const int v = q.front();
        q.pop();
        t.bto.push_back(v);
        for (int c : t.children[v]) {
            if (seen[c]) throw StructureError("tree_from_parents: cycle detected");
            seen[c] = 1;
            q.push(c);
        }
    }
    if (static_cast<int>(t.bto.size()) != n)
        throw StructureError("tree_from_parents: cycle detected (unreachable vertices)");
    return t;
}

SpanningTree single_node_tree() { return tree_from_parents({0}, 0); }

void tree_scan_passes(const SpanningTree& tree, const Matrix& abar, Matrix& zeta, Matrix& h) {
    check_shape(abar.rows() == tree.n && zeta.same_shape(abar), "tree_scan_passes: shape mismatch");
    const int q = abar.cols();
    const auto& bto = tree.bto;
    for (int idx = tree.n - 1; idx >= 0; --idx) {
        const int j = bto[idx];
        if (j == tree.root) continue;
        const double* aj = abar.row(j);
        const double* zj = zeta.row(j);
        double* zp = zeta.row(tree.parent[j]);
        for (int c = 0; c < q; ++c) zp[c] += aj[c] * zj[c];
    }
    h = Matrix(tree.n, q);
    for (int idx = 0; idx < tree.n; ++idx) {
        const int j = bto[idx];
        if (j == tree.root) {
            std::copy(zeta.row(j), zeta.row(j) + q, h.row(j));
            continue;
        }
        const double* aj = abar.row(j);
        const double* zj = zeta.row(j);
        const double* hp = h.row(tree.parent[j]);
        double* hj = h.row(j);
        for (int c = 0; c < q; ++c) hj[c] = aj[c] * (hp[c] - aj[c] * zj[c]) + zj[c];
    }
}

std::vector<int> bto_order(const SpanningTree& tree) {
    std::vector<int> order;
    order.reserve(tree.n);
    std::queue<int> q;
    q.push(tree.root);
    std::vector<char> seen(tree.n, 0);
    seen[tree.root] = 1;
    while (!q.empty()) {
        const int v = q.front();
        q.pop();
        order.push_back(v);
        for (int c : tree.children[v]) {
            if (seen[c]) throw StructureError("bto_order: cycle detected");
            seen[c] = 1;
            q.push(c);
        }
    }
    if (static_cast<int>(order.size()) != tree.n)
        throw StructureError("bto_order: cycle detected (unreachable vertices)");
    return order;
}

namespace {

struct Dsu {
    std::vector<int> p;
    explicit Dsu(int n) : p(n) { std::iota(p.begin(), p.end(), 0); }
    int find(int x) {
        while (p[x] != x) {
            p[x] = p[p[x]];
            x = p[x];
        }
        return x;
    }
    bool unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        p[b] = a;
        return true;
    }
};

std::vector<double> row_norms(const Matrix& x) {
    std::vector<double> nrm(x.rows());
    for (int i = 0; i < x.rows(); ++i) {
        double s = 0.0;
        const double* r = x.row(i);
        for (int j = 0; j < x.cols(); ++j) s += r[j] * r[j];
        nrm[i] = std::sqrt(s);
    }
    return nrm;
}

}  // namespace

SequenceGraph build_knn_graph(const Matrix& x, int phi) {
    const int n = x.rows();
    if (n <= 0) throw UsageError("build_knn_graph: empty input");
    if (phi < 1 || phi >= n) throw UsageError("build_knn_graph: need 1 <= phi < n");

    const std::vector<double> nrm = row_norms(x);
    for (int i = 0; i < n; ++i)
        if (nrm[i] == 0.0)
            throw DegenerateInputError("build_knn_graph: zero-norm row " + std::to_string(i));

    // All-pairs cosine similarities. n stays small enough (a few thousand at
    // the benchmark's largest size) that the quadratic table is fine.
    Matrix sim = matmul_nt(x, x);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) sim(i, j) /= nrm[i] * nrm[j];

    std::set<std::pair<int, int>> edge_set;
    std::vector<int> cand(n - 1);
    for (int i = 0; i < n; ++i) {
        int k = 0;
        for (int j = 0; j < n; ++j)
            if (j != i) cand[k++] = j;
        // Highest similarity first, ties toward the lower vertex index.
        std::stable_sort(cand.begin(), cand.end(), [&](int a, int b) {
            if (sim(i, a) != sim(i, b)) return sim(i, a) > sim(i, b);
            return a < b;
        });
        for (int t = 0; t < phi; ++t) {
            const int j = cand[t];
            edge_set.emplace(std::min(i, j), std::max(i, j));
        }
    }

    // Connectivity repair: one best cross-component edge per merge.
    Dsu dsu(n);
    for (const auto& [u, v] : edge_set) dsu.unite(u, v);
    while (true) {
        int comps = 0;
        for (int i = 0; i < n; ++i)
            if (dsu.find(i) == i) ++comps;
        if (comps <= 1) break;
        int bu = -1, bv = -1;
        double best = -2.0;
        for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j) {
                if (dsu.find(i) == dsu.find(j)) continue;
                if (sim(i, j) > best) {
                    best = sim(i, j);
                    bu = i;
                    bv = j;
                }
            }
        }
        edge_set.emplace(bu, bv);
        dsu.unite(bu, bv);
    }

    SequenceGraph g;
    g.n = n;
    g.edges.reserve(edge_set.size());
    for (const auto& [u, v] : edge_set) g.edges.push_back({u, v, 1.0 - sim(u, v)});
    return g;
}

SpanningTree boruvka_mst(const SequenceGraph& g) {
    const int n = g.n;
    if (n <= 0) throw UsageError("boruvka_mst: empty graph");

    auto edge_less = [&](int a, int b) {
        const auto& ea = g.edges[a];
        const auto& eb = g.edges[b];
        if (ea.w != eb.w) return ea.w < eb.w;
        if (ea.u != eb.u) return ea.u < eb.u;
        return ea.v < eb.v;
    };

    Dsu dsu(n);
    std::vector<char> chosen(g.edges.size(), 0);
    int components = n;
    while (components > 1) {
        // Cheapest outgoing edge per component under (w, u, v) order.
        std::map<int, int> best;  // component root -> edge index
        for (int e = 0; e < static_cast<int>(g.edges.size()); ++e) {
            const int cu = dsu.find(g.edges[e].u);
            const int cv = dsu.find(g.edges[e].v);
            if (cu == cv) continue;
            for (int c : {cu, cv}) {
                auto it = best.find(c);
                if (it == best.end() || edge_less(e, it->second)) best[c] = e;
            }
        }
        if (best.empty()) throw ConnectivityError("boruvka_mst: graph is disconnected");
        bool merged = false;
        for (const auto& [comp, e] : best) {
            (void)comp;
            if (dsu.unite(g.edges[e].u, g.edges[e].v)) {
                chosen[e] = 1;
                --components;
                merged = true;
            }
        }
        if (!merged) throw ConnectivityError("boruvka_mst: graph is disconnected");
    }

    // Orient the chosen edges away from vertex 0 via BFS.
    std::vector<std::vector<int>> adj(n);
    for (size_t e = 0; e < g.edges.size(); ++e) {
        if (!chosen[e]) continue;
        adj[g.edges[e].u].push_back(g.edges[e].v);
        adj[g.edges[e].v].push_back(g.edges[e].u);
    }
    std::vector<int> parent(n, -1);
    parent[0] = 0;
    std::queue<int> q;
    q.push(0);
    while (!q.empty()) {
        const int v = q.front();
        q.pop();
        std::vector<int> nb = adj[v];
        std::sort(nb.begin(), nb.end());
        for (int w : nb) {
            if (parent[w] != -1) continue;
            parent[w] = v;
            q.push(w);
        }
    }
    return tree_from_parents(std::move(parent), 0);
}

double tree_total_weight(const SequenceGraph& g, const SpanningTree& t) {
    // Deterministic summation order: edges sorted by (child index).
    double total = 0.0;
    std::map<std::pair<int, int>, double> w;
    for (const auto& e : g.edges) w[{e.u, e.v}] = e.w;
    for (int v = 0; v < t.n; ++v) {
        if (v == t.root) continue;
        const int p = t.parent[v];
        auto it = w.find({std::min(p, v), std::max(p, v)});
        if (it == w.end()) throw StructureError("tree_total_weight: tree edge missing from graph");
        total += it->second;
    }
    return total;
}

}  // namespace hvpl
