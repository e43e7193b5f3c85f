#include "hvpl/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

namespace hvpl::oracles {

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

Matrix attention_scores_reference(const Matrix& prompts, const Matrix& feats, const Matrix& wq,
                                  const Matrix& wk, int head, int n_heads) {
    const int d = prompts.cols();
    const int dh = d / n_heads;
    Matrix q(prompts.rows(), dh), k(feats.rows(), dh);
    for (int i = 0; i < prompts.rows(); ++i)
        for (int j = 0; j < dh; ++j) {
            double s = 0.0;
            for (int c = 0; c < d; ++c) s += prompts(i, c) * wq(c, head * dh + j);
            q(i, j) = s;
        }
    for (int i = 0; i < feats.rows(); ++i)
        for (int j = 0; j < dh; ++j) {
            double s = 0.0;
            for (int c = 0; c < d; ++c) s += feats(i, c) * wk(c, head * dh + j);
            k(i, j) = s;
        }
    Matrix logits(q.rows(), k.rows());
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int i = 0; i < q.rows(); ++i)
        for (int j = 0; j < k.rows(); ++j) {
            double s = 0.0;
            for (int c = 0; c < dh; ++c) s += q(i, c) * k(j, c);
            logits(i, j) = s * inv;
        }
    // Row softmax written out directly.
    Matrix out(logits.rows(), logits.cols());
    for (int i = 0; i < logits.rows(); ++i) {
        double mx = logits(i, 0);
        for (int j = 1; j < logits.cols(); ++j) mx = std::max(mx, logits(i, j));
        double z = 0.0;
        for (int j = 0; j < logits.cols(); ++j) z += std::exp(logits(i, j) - mx);
        for (int j = 0; j < logits.cols(); ++j) out(i, j) = std::exp(logits(i, j) - mx) / z;
    }
    return out;
}

std::set<std::pair<int, int>> knn_edges_reference(const Matrix& x, int phi) {
    const int n = x.rows();
    std::vector<double> nrm(n);
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < x.cols(); ++j) s += x(i, j) * x(i, j);
        nrm[i] = std::sqrt(s);
    }
    auto cosine = [&](int i, int j) {
        double s = 0.0;
        for (int c = 0; c < x.cols(); ++c) s += x(i, c) * x(j, c);
        return s / (nrm[i] * nrm[j]);
    };
    std::set<std::pair<int, int>> edges;
    for (int i = 0; i < n; ++i) {
        std::vector<int> others;
        for (int j = 0; j < n; ++j)
            if (j != i) others.push_back(j);
        std::stable_sort(others.begin(), others.end(), [&](int a, int b) {
            const double ca = cosine(i, a), cb = cosine(i, b);
            if (ca != cb) return ca > cb;
            return a < b;
        });
        for (int t = 0; t < phi; ++t)
            edges.emplace(std::min(i, others[t]), std::max(i, others[t]));
    }
    return edges;
}

MstReference kruskal_mst(const SequenceGraph& g) {
    std::vector<int> idx(g.edges.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (g.edges[a].w != g.edges[b].w) return g.edges[a].w < g.edges[b].w;
        if (g.edges[a].u != g.edges[b].u) return g.edges[a].u < g.edges[b].u;
        return g.edges[a].v < g.edges[b].v;
    });
    std::vector<int> parent(g.n);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int v) {
        while (parent[v] != v) {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        return v;
    };
    MstReference ref;
    for (int e : idx) {
        const int ru = find(g.edges[e].u), rv = find(g.edges[e].v);
        if (ru == rv) continue;
        parent[ru] = rv;
        ref.edges.emplace_back(g.edges[e].u, g.edges[e].v, g.edges[e].w);
    }
    std::sort(ref.edges.begin(), ref.edges.end());
    for (const auto& [u, v, w] : ref.edges) {
        (void)u;
        (void)v;
        ref.total += w;
    }
    return ref;
}

std::vector<int> exhaustive_assignment(const Matrix& cost) {
    const int rows = cost.rows(), cols = cost.cols();
    std::vector<int> best(rows, -1), cur(rows, -1);
    double best_cost = std::numeric_limits<double>::infinity();
    std::vector<char> used(cols, 0);
    const int assignable = std::min(rows, cols);

    std::function<void(int, int, double)> rec = [&](int row, int assigned, double acc) {
        if (acc >= best_cost) return;
        if (row == rows) {
            if (assigned == assignable && acc < best_cost) {
                best_cost = acc;
                best = cur;
            }
            return;
        }
        // Leave this row unassigned only if enough columns remain for others.
        if (rows - row - 1 >= assignable - assigned) {
            cur[row] = -1;
            rec(row + 1, assigned, acc);
        }
        for (int c = 0; c < cols; ++c) {
            if (used[c]) continue;
            used[c] = 1;
            cur[row] = c;
            rec(row + 1, assigned + 1, acc + cost(row, c));
            used[c] = 0;
            cur[row] = -1;
        }
    };
    rec(0, 0, 0.0);
    return best;
}

Matrix msa_layer_reference(const Matrix& p_vid, const Matrix& f_prev,
                           const MsaReferenceWeights& w) {
    const int d = p_vid.cols();
    const int dh = d / w.n_heads;
    Matrix concat(p_vid.rows(), d);
    for (int h = 0; h < w.n_heads; ++h) {
        Matrix scores = attention_scores_reference(p_vid, f_prev, w.wq, w.wk, h, w.n_heads);
        // values for this head
        Matrix vh(f_prev.rows(), dh);
        for (int i = 0; i < f_prev.rows(); ++i)
            for (int j = 0; j < dh; ++j) {
                double s = 0.0;
                for (int c = 0; c < d; ++c) s += f_prev(i, c) * w.wv(c, h * dh + j);
                vh(i, j) = s;
            }
        for (int i = 0; i < p_vid.rows(); ++i)
            for (int j = 0; j < dh; ++j) {
                double s = 0.0;
                for (int r = 0; r < f_prev.rows(); ++r) s += scores(i, r) * vh(r, j);
                concat(i, h * dh + j) = s;
            }
    }
    Matrix msa = naive_matmul(concat, w.wo);
    for (int i = 0; i < msa.rows(); ++i)
        for (int j = 0; j < msa.cols(); ++j) msa(i, j) += p_vid(i, j);

    auto silu_ref = [](double x) { return x / (1.0 + std::exp(-x)); };
    Matrix hmid = naive_matmul(msa, w.mlp_w1);
    for (int i = 0; i < hmid.rows(); ++i)
        for (int j = 0; j < hmid.cols(); ++j) hmid(i, j) = silu_ref(hmid(i, j) + w.mlp_b1(0, j));
    Matrix mlp = naive_matmul(hmid, w.mlp_w2);
    for (int i = 0; i < mlp.rows(); ++i)
        for (int j = 0; j < mlp.cols(); ++j) mlp(i, j) += w.mlp_b2(0, j) + msa(i, j);
    return mlp;
}

Matrix gss_layer_reference(const Matrix& z_prev, const GssWeights& w, int knn_phi, bool residual) {
    auto affine = [](const Matrix& m, const Matrix& wt, const Matrix& b) {
        Matrix out = naive_matmul(m, wt);
        for (int i = 0; i < out.rows(); ++i)
            for (int j = 0; j < out.cols(); ++j) out(i, j) += b(0, j);
        return out;
    };
    const Matrix x = silu(depthwise_conv1d(affine(z_prev, w.w_in_right, w.b_in_right),
                                           w.conv_kernel, w.conv_bias));
    const Matrix z_left = silu(affine(z_prev, w.w_in_left, w.b_in_left));

    const SpanningTree tree = boruvka_mst(build_knn_graph(x, knn_phi));

    // Assemble explicit per-position parameters from the factored weights and
    // run the public sub-operations.
    const int n = x.rows(), d = x.cols(), q = w.a_log.cols();
    ExplicitSsm params;
    params.a.resize(q);
    for (int i = 0; i < q; ++i) params.a[i] = -std::exp(w.a_log(0, i));
    for (int j = 0; j < n; ++j) {
        double dl = w.b_delta(0, 0);
        for (int c = 0; c < d; ++c) dl += x(j, c) * w.w_delta(c, 0);
        params.delta.push_back(dl > 0 ? dl + std::log1p(std::exp(-dl)) : std::log1p(std::exp(dl)));

        // Rank-1 drive: B_j = (W_b^T x_j) ⊗ r_map, so B_j x_j = b_sel (r . x_j).
        Matrix bj(q, d);
        for (int r = 0; r < q; ++r) {
            double bsel = 0.0;
            for (int c = 0; c < d; ++c) bsel += x(j, c) * w.w_b(c, r);
            for (int c = 0; c < d; ++c) bj(r, c) = bsel * w.r_map(c, 0);
        }
        params.b.push_back(std::move(bj));

        Matrix cj(d, q);
        for (int r = 0; r < d; ++r)
            for (int col = 0; col < q; ++col) {
                double csel = 0.0;
                for (int c = 0; c < d; ++c) csel += x(j, c) * w.w_c(c, col);
                cj(r, col) = w.u_c(col, r) * csel;
            }
        params.c.push_back(std::move(cj));
    }
    params.d_skip.assign(d, 0.0);
    for (int c = 0; c < d; ++c) params.d_skip[c] = w.d_skip(0, c);

    const Matrix h = gt_ssm_bruteforce(x, params, tree);
    const Matrix y = ssm_output(h, params, x);
    Matrix out = naive_matmul(hadamard(layer_norm_rows(y), z_left), w.w_p);
    if (residual) out = add(out, z_prev);
    return out;
}

}  // namespace hvpl::oracles
