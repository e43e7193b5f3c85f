#include "hvpl/oracle_suites.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "hvpl/eval.hpp"
#include "hvpl/graph.hpp"
#include "hvpl/linalg.hpp"
#include "hvpl/loss.hpp"
#include "hvpl/ogc.hpp"
#include "hvpl/oracles.hpp"
#include "hvpl/rng.hpp"
#include "hvpl/ssm.hpp"
#include "hvpl/tape.hpp"

namespace hvpl::oracles {

namespace {

struct Suite {
    SuiteResult result;
    explicit Suite(std::string name) { result.name = std::move(name); }
    void expect(bool ok, const std::string& what) {
        ++result.checks;
        if (!ok) {
            ++result.failures;
            if (result.detail.empty()) result.detail = what;
        }
    }
};

SuiteResult matmul_suite() {
    Suite s("matmul vs triple loop");
    for (int trial = 0; trial < 20; ++trial) {
        Rng rng(trial, "oracle/matmul");
        Matrix a = rng.normal_matrix(5, 7, 1.0);
        Matrix b = rng.normal_matrix(7, 3, 1.0);
        s.expect(max_abs_diff(matmul(a, b), naive_matmul(a, b)) < 1e-12, "product mismatch");
    }
    return s.result;
}

SuiteResult softmax_suite() {
    Suite s("softmax closed forms");
    Matrix two = Matrix::from_rows(1, 2, {0.0, std::log(3.0)});
    Matrix t = softmax_rows(two);
    s.expect(std::fabs(t(0, 0) - 0.25) <= 1e-12 && std::fabs(t(0, 1) - 0.75) <= 1e-12,
             "[0, ln3] row");
    for (int trial = 0; trial < 10; ++trial) {
        Rng rng(trial, "oracle/softmax");
        Matrix m = rng.normal_matrix(4, 6, 3.0);
        Matrix sm = softmax_rows(m);
        for (int i = 0; i < sm.rows(); ++i) {
            double sum = 0.0;
            for (int j = 0; j < sm.cols(); ++j) sum += sm(i, j);
            s.expect(std::fabs(sum - 1.0) <= 1e-12, "row sum");
        }
    }
    return s.result;
}

SuiteResult svd_suite() {
    Suite s("svd reconstruction");
    for (int trial = 0; trial < 10; ++trial) {
        Rng rng(trial, "oracle/svd");
        Matrix a = rng.normal_matrix(6, 4, 1.0);
        SvdResult r = svd(a);
        Matrix us(6, 4);
        for (int i = 0; i < 6; ++i)
            for (int j = 0; j < 4; ++j) us(i, j) = r.u(i, j) * r.s[j];
        s.expect(frobenius_norm(sub(matmul_nt(us, r.v), a)) <= 1e-8 * frobenius_norm(a),
                 "reconstruction");
        s.expect(max_abs_diff(matmul_tn(r.v, r.v), Matrix::identity(4)) <= 1e-10, "V orthonormal");
    }
    return s.result;
}

SuiteResult pca_suite() {
    Suite s("pca explained variance");
    for (int trial = 0; trial < 5; ++trial) {
        Rng rng(trial, "oracle/pca");
        Matrix pts = rng.normal_matrix(20, 8, 1.0);
        PcaResult p = pca_reduce(pts, 2);
        double captured = 0.0;
        for (size_t i = 0; i < p.reduced.size(); ++i)
            captured += p.reduced.data()[i] * p.reduced.data()[i];
        const double expect = p.singular_values[0] * p.singular_values[0] +
                              p.singular_values[1] * p.singular_values[1];
        s.expect(std::fabs(captured - expect) <= 1e-8 * expect, "variance mass");
    }
    return s.result;
}

SuiteResult attention_suite() {
    Suite s("cross attention vs reference");
    DetectorConfig cfg;
    cfg.d_model = 64;
    cfg.n_heads = 4;
    cfg.layers = 2;
    Detector det(cfg, 99);
    for (int trial = 0; trial < 10; ++trial) {
        Rng rng(trial, "oracle/attn");
        Matrix p = rng.normal_matrix(4, 64, 1.0);
        Matrix f = rng.normal_matrix(16, 64, 1.0);
        const int head = trial % 4;
        Matrix got = det.cross_attention_scores(p, f, 0, head);
        Matrix ref = attention_scores_reference(p, f, det.weights().layers[0].wq,
                                                det.weights().layers[0].wk, head, 4);
        s.expect(max_abs_diff(got, ref) <= 1e-12, "score mismatch");
    }
    return s.result;
}

SuiteResult knn_suite() {
    Suite s("knn graph vs all-pairs");
    for (int trial = 0; trial < 5; ++trial) {
        Rng rng(trial, "oracle/knn");
        Matrix x = rng.normal_matrix(32, 16, 1.0);
        SequenceGraph g = build_knn_graph(x, 4);
        auto ref = knn_edges_reference(x, 4);
        std::set<std::pair<int, int>> got;
        for (const auto& e : g.edges) got.emplace(e.u, e.v);
        s.expect(got == ref, "edge set mismatch");
    }
    return s.result;
}

SuiteResult mst_suite() {
    Suite s("boruvka vs kruskal");
    for (int trial = 0; trial < 20; ++trial) {
        Rng rng(trial, "oracle/mst");
        const int n = 8 + static_cast<int>(rng.next_u64() % 57);
        Matrix x = rng.normal_matrix(n, 8, 1.0);
        SequenceGraph g = build_knn_graph(x, std::min(4, n - 1));
        SpanningTree t = boruvka_mst(g);
        MstReference ref = kruskal_mst(g);
        auto edges = t.edges();
        std::vector<std::pair<int, int>> got;
        for (auto [p, c] : edges) got.emplace_back(std::min(p, c), std::max(p, c));
        std::sort(got.begin(), got.end());
        bool same = got.size() == ref.edges.size();
        for (size_t i = 0; same && i < got.size(); ++i)
            same = got[i].first == std::get<0>(ref.edges[i]) &&
                   got[i].second == std::get<1>(ref.edges[i]);
        s.expect(same, "edge set mismatch");
    }
    return s.result;
}

SuiteResult zoh_suite() {
    Suite s("zoh closed forms");
    Matrix b = Matrix::from_rows(1, 2, {2.0, -4.0});
    ZohDiscrete d = discretize({-1.0}, std::log(2.0), b);
    s.expect(std::fabs(d.abar[0] - 0.5) <= 1e-14, "abar");
    s.expect(std::fabs(d.bbar(0, 0) - 1.0) <= 1e-12 && std::fabs(d.bbar(0, 1) + 2.0) <= 1e-12,
             "bbar");
    Rng rng(1, "oracle/zoh");
    Matrix b2 = rng.normal_matrix(3, 4, 1.0);
    ZohDiscrete lim = discretize({-0.5, -1.0, -2.0}, 1e-9, b2);
    for (double a : lim.abar) s.expect(std::fabs(a - 1.0) <= 1e-8, "delta->0 abar limit");
    s.expect(frobenius_norm(lim.bbar) <= 1e-8 * frobenius_norm(b2), "delta->0 bbar limit");
    return s.result;
}

SuiteResult traversal_suite() {
    Suite s("fast vs brute-force traversal");
    for (int trial = 0; trial < 50; ++trial) {
        Rng rng(4000 + trial, "oracle/trav");
        const int n = 1 + static_cast<int>(rng.next_u64() % 64);
        const int q = std::vector<int>{1, 4, 16}[trial % 3];
        ExplicitSsm p;
        for (int i = 0; i < q; ++i) p.a.push_back(-std::exp(rng.normal() * 0.5));
        for (int j = 0; j < n; ++j) {
            p.delta.push_back(0.05 + std::fabs(rng.normal()));
            p.b.push_back(rng.normal_matrix(q, 6, 1.0));
        }
        Matrix x = rng.normal_matrix(n, 6, 1.0);
        std::vector<int> parent(n);
        parent[0] = 0;
        for (int v = 1; v < n; ++v) parent[v] = rng.uniform_int(0, v - 1);
        SpanningTree tree = tree_from_parents(parent, 0);
        Matrix fast = gt_ssm_fast(x, p, tree);
        Matrix brute = gt_ssm_bruteforce(x, p, tree);
        const double rel =
            frobenius_norm(sub(fast, brute)) / std::max(1e-12, frobenius_norm(brute));
        s.expect(rel <= 1e-6, "relative deviation");
    }
    return s.result;
}

SuiteResult msa_suite() {
    Suite s("msa layer vs reference");
    for (int trial = 0; trial < 10; ++trial) {
        Rng rng(trial, "oracle/msa");
        MsaReferenceWeights rw;
        rw.n_heads = 4;
        const int d = 64;
        rw.wq = rng.normal_matrix(d, d, 0.125);
        rw.wk = rng.normal_matrix(d, d, 0.125);
        rw.wv = rng.normal_matrix(d, d, 0.125);
        rw.wo = rng.normal_matrix(d, d, 0.125);
        rw.mlp_w1 = rng.normal_matrix(d, d, 0.125);
        rw.mlp_b1 = rng.normal_matrix(1, d, 0.1);
        rw.mlp_w2 = rng.normal_matrix(d, d, 0.125);
        rw.mlp_b2 = rng.normal_matrix(1, d, 0.1);
        Matrix p = rng.normal_matrix(8, d, 1.0);
        Matrix f = rng.normal_matrix(32, d, 1.0);

        MsaWeights w;
        w.wq = rw.wq;
        w.wk = rw.wk;
        w.wv = rw.wv;
        w.wo = rw.wo;
        w.mlp_w1 = rw.mlp_w1;
        w.mlp_b1 = rw.mlp_b1;
        w.mlp_w2 = rw.mlp_w2;
        w.mlp_b2 = rw.mlp_b2;
        Tape t;
        MsaVars mv = push_msa(t, w, false);
        Var out = msa_layer(t, t.constant(p), t.constant(f), mv, 4, false);
        Matrix ref = msa_layer_reference(p, f, rw);
        s.expect(max_abs_diff(t.val(out), ref) <= 1e-9 * std::max(1.0, frobenius_norm(ref)),
                 "layer mismatch");
    }
    return s.result;
}

SuiteResult gss_suite() {
    Suite s("gss layer vs composition");
    for (int trial = 0; trial < 5; ++trial) {
        Rng rng(6000 + trial, "oracle/gss");
        GssWeights w = GssWeights::init(8, 4, 123 + trial, "oracle/gssw");
        Matrix z = rng.normal_matrix(16, 8, 1.0);
        Tape t;
        GssVars v = push_gss(t, w, false);
        GssLayerOut out = gss_layer(t, t.constant(z), v, 3, false);
        Matrix ref = gss_layer_reference(z, w, 3, false);
        s.expect(max_abs_diff(t.val(out.z_next), ref) <=
                     1e-9 * std::max(1.0, frobenius_norm(ref)),
                 "composition mismatch");
    }
    return s.result;
}

SuiteResult hungarian_suite() {
    Suite s("hungarian vs exhaustive");
    for (int trial = 0; trial < 30; ++trial) {
        Rng rng(trial, "oracle/hung");
        const int rows = 2 + static_cast<int>(rng.next_u64() % 4);
        const int cols = 2 + static_cast<int>(rng.next_u64() % 4);
        Matrix cost(rows, cols);
        for (size_t i = 0; i < cost.size(); ++i) cost.data()[i] = rng.uniform() * 10.0;
        const auto got = hungarian(cost);
        const auto ref = exhaustive_assignment(cost);
        double got_cost = 0.0, ref_cost = 0.0;
        for (int r = 0; r < rows; ++r) {
            if (got[r] >= 0) got_cost += cost(r, got[r]);
            if (ref[r] >= 0) ref_cost += cost(r, ref[r]);
        }
        s.expect(std::fabs(got_cost - ref_cost) <= 1e-9, "assignment cost mismatch");
    }
    return s.result;
}

SuiteResult fap_suite() {
    Suite s("forgetting-rate fixtures");
    // Build a fake 2-task history: one old class 0.5 -> 0.25 gives 0.5.
    TaskSequence seq;
    {
        Task t1;
        t1.id = 1;
        t1.label_space = {1};
        Task t2;
        t2.id = 2;
        t2.label_space = {2};
        seq.tasks = {t1, t2};
        std::vector<EvalReport> hist(2);
        hist[0].after_task = 1;
        hist[0].per_class[1] = {0.5, 0, 0, 0.5};
        hist[1].after_task = 2;
        hist[1].per_class[1] = {0.25, 0, 0, 0.25};
        hist[1].per_class[2] = {0.9, 0, 0, 0.9};
        ForgettingReport f = compute_fap(hist, seq);
        s.expect(f.fap.has_value() && *f.fap == 0.5, "T=2 fixture");
    }
    {
        // T=3: task-1 classes 0.4->0.2 and 0.6->0.6, task-2 class 0.5->0.25.
        Task t1;
        t1.id = 1;
        t1.label_space = {1, 2};
        Task t2;
        t2.id = 2;
        t2.label_space = {3};
        Task t3;
        t3.id = 3;
        t3.label_space = {4};
        TaskSequence seq3;
        seq3.tasks = {t1, t2, t3};
        std::vector<EvalReport> hist(3);
        hist[0].per_class[1] = {0.4, 0, 0, 0.4};
        hist[0].per_class[2] = {0.6, 0, 0, 0.6};
        hist[1].per_class[3] = {0.5, 0, 0, 0.5};
        hist[2].per_class[1] = {0.2, 0, 0, 0.2};
        hist[2].per_class[2] = {0.6, 0, 0, 0.6};
        hist[2].per_class[3] = {0.25, 0, 0, 0.25};
        hist[2].per_class[4] = {0.8, 0, 0, 0.8};
        ForgettingReport f = compute_fap(hist, seq3);
        s.expect(f.fap.has_value() && *f.fap == 0.25, "T=3 fixture");
    }
    {
        // No forgetting -> exactly zero.
        Task t1;
        t1.id = 1;
        t1.label_space = {1};
        Task t2;
        t2.id = 2;
        t2.label_space = {2};
        TaskSequence seq2;
        seq2.tasks = {t1, t2};
        std::vector<EvalReport> hist(2);
        hist[0].per_class[1] = {0.7, 0, 0, 0.7};
        hist[1].per_class[1] = {0.7, 0, 0, 0.7};
        hist[1].per_class[2] = {0.5, 0, 0, 0.5};
        ForgettingReport f = compute_fap(hist, seq2);
        s.expect(f.fap.has_value() && *f.fap == 0.0, "no-forgetting fixture");
    }
    return s.result;
}

SuiteResult adam_suite() {
    Suite s("adam recurrence fixture");
    OptimizerConfig adam;
    adam.lr = 0.01;
    Matrix q = Matrix::from_rows(2, 2, {1.0, 2.0, -1.0, 0.5});
    Matrix g = Matrix::from_rows(2, 2, {0.5, -0.25, 1.0, 0.0});
    ParamState st;
    Matrix p = q;
    optimizer_apply(adam, p, g, st);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            const double m = 0.1 * g(i, j);
            const double v = 0.001 * g(i, j) * g(i, j);
            const double mh = m / (1.0 - 0.9);
            const double vh = v / (1.0 - 0.999);
            const double expect = q(i, j) - 0.01 * mh / (std::sqrt(vh) + 1e-8);
            s.expect(std::fabs(p(i, j) - expect) <= 1e-14, "first step");
        }
    return s.result;
}

SuiteResult gradcheck_suite() {
    Suite s("pipeline gradient finite differences");
    // Small end-to-end subgraph: softmax-attention-like chain + losses.
    for (int trial = 0; trial < 5; ++trial) {
        Rng rng(7000 + trial, "oracle/fd");
        Matrix pv = rng.normal_matrix(3, 8, 1.0);
        Matrix fv = rng.normal_matrix(6, 8, 1.0);
        Matrix w = rng.normal_matrix(8, 8, 0.3);
        Matrix read = rng.normal_matrix(3, 8, 1.0);
        auto eval = [&](const Matrix& p) {
            Tape t;
            Var pp = t.param(p);
            Var scores = t.softmax_rows(t.scale(t.matmul_nt(t.matmul(pp, t.constant(w)),
                                                            t.constant(fv)),
                                                0.35));
            Var ctx = t.matmul(scores, t.constant(fv));
            Var y = t.layer_norm_rows(t.silu(ctx));
            return t.val(t.sum_all(t.mul(y, t.constant(read))))(0, 0);
        };
        Tape t;
        Var pp = t.param(pv);
        Var scores = t.softmax_rows(
            t.scale(t.matmul_nt(t.matmul(pp, t.constant(w)), t.constant(fv)), 0.35));
        Var ctx = t.matmul(scores, t.constant(fv));
        Var y = t.layer_norm_rows(t.silu(ctx));
        t.backward(t.sum_all(t.mul(y, t.constant(read))));
        const Matrix& g = t.grad(pp);
        const double step = 1e-6;
        double worst = 0.0;
        for (int i = 0; i < pv.rows(); ++i)
            for (int j = 0; j < pv.cols(); ++j) {
                Matrix hi = pv, lo = pv;
                hi(i, j) += step;
                lo(i, j) -= step;
                const double fd = (eval(hi) - eval(lo)) / (2 * step);
                const double denom = std::max({std::fabs(fd), std::fabs(g(i, j)), 1e-4});
                worst = std::max(worst, std::fabs(fd - g(i, j)) / denom);
            }
        s.expect(worst < 1e-5, "fd mismatch");
    }
    return s.result;
}

}  // namespace

std::vector<SuiteResult> run_oracle_suites() {
    return {matmul_suite(),   softmax_suite(), svd_suite(),      pca_suite(),
            attention_suite(), knn_suite(),     mst_suite(),      zoh_suite(),
            traversal_suite(), msa_suite(),     gss_suite(),      hungarian_suite(),
            fap_suite(),       adam_suite(),    gradcheck_suite()};
}

}  // namespace hvpl::oracles
