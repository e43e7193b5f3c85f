#include "hvpl/ssm.hpp"

#include <cmath>

#include "hvpl/rng.hpp"

namespace hvpl {

ZohDiscrete discretize(const std::vector<double>& a_diag, double delta, const Matrix& b) {
    const int q = static_cast<int>(a_diag.size());
    check_shape(b.rows() == q, "discretize: B rows must match state dim");
    for (double a : a_diag)
        if (!(a < 0.0)) throw ParameterizationError("discretize: state matrix entries must be < 0");
    if (!(delta > 0.0)) throw ParameterizationError("discretize: timescale must be > 0");

    ZohDiscrete out;
    out.abar.resize(q);
    out.bbar = b;
    for (int i = 0; i < q; ++i) {
        const double e = std::exp(delta * a_diag[i]);
        out.abar[i] = e;
        const double s = (e - 1.0) / a_diag[i];
        double* row = out.bbar.row(i);
        for (int j = 0; j < b.cols(); ++j) row[j] *= s;
    }
    return out;
}

namespace {

// Per-position drive beta_j = Bbar_j X_j as an N x Q matrix.
Matrix drive_matrix(const Matrix& x, const ExplicitSsm& p, Matrix* abar_out) {
    const int n = x.rows();
    const int q = static_cast<int>(p.a.size());
    check_shape(static_cast<int>(p.delta.size()) == n && static_cast<int>(p.b.size()) == n,
                "ssm: per-position parameter count mismatch");
    Matrix beta(n, q);
    if (abar_out) *abar_out = Matrix(n, q);
    for (int j = 0; j < n; ++j) {
        const ZohDiscrete d = discretize(p.a, p.delta[j], p.b[j]);
        const double* xr = x.row(j);
        double* br = beta.row(j);
        for (int r = 0; r < q; ++r) {
            double s = 0.0;
            const double* bb = d.bbar.row(r);
            for (int c = 0; c < x.cols(); ++c) s += bb[c] * xr[c];
            br[r] = s;
            if (abar_out) (*abar_out)(j, r) = d.abar[r];
        }
    }
    return beta;
}

}  // namespace

Matrix gt_ssm_bruteforce(const Matrix& x, const ExplicitSsm& p, const SpanningTree& tree) {
    check_shape(x.rows() == tree.n, "gt_ssm_bruteforce: size mismatch");
    Matrix abar;
    const Matrix beta = drive_matrix(x, p, &abar);
    const int n = tree.n, q = abar.cols();

    // Undirected adjacency for the per-source walks.
    std::vector<std::vector<int>> adj(n);
    for (int v = 0; v < n; ++v) {
        if (v == tree.root) continue;
        adj[v].push_back(tree.parent[v]);
        adj[tree.parent[v]].push_back(v);
    }

    Matrix h(n, q);
    std::vector<int> stack;
    std::vector<char> seen(n);
    Matrix omega(n, q);  // product of edge factors along the path source -> k
    for (int src = 0; src < n; ++src) {
        std::fill(seen.begin(), seen.end(), 0);
        stack.assign(1, src);
        seen[src] = 1;
        for (int c = 0; c < q; ++c) omega(src, c) = 1.0;
        double* hs = h.row(src);
        while (!stack.empty()) {
            const int cur = stack.back();
            stack.pop_back();
            const double* om = omega.row(cur);
            const double* bc = beta.row(cur);
            for (int c = 0; c < q; ++c) hs[c] += om[c] * bc[c];
            for (int nb : adj[cur]) {
                if (seen[nb]) continue;
                seen[nb] = 1;
                // The edge between cur and nb contributes the abar of its
                // child endpoint, independent of walk direction.
                const int child = (tree.parent[nb] == cur) ? nb : cur;
                const double* ac = abar.row(child);
                double* on = omega.row(nb);
                for (int c = 0; c < q; ++c) on[c] = om[c] * ac[c];
                stack.push_back(nb);
            }
        }
    }
    return h;
}

Matrix gt_ssm_fast(const Matrix& x, const ExplicitSsm& p, const SpanningTree& tree) {
    check_shape(x.rows() == tree.n, "gt_ssm_fast: size mismatch");
    Matrix abar;
    Matrix zeta = drive_matrix(x, p, &abar);
    Matrix h;
    tree_scan_passes(tree, abar, zeta, h);
    return h;
}

Matrix ssm_output(const Matrix& h, const ExplicitSsm& p, const Matrix& x) {
    check_shape(static_cast<int>(p.c.size()) == x.rows(), "ssm_output: C count mismatch");
    check_shape(static_cast<int>(p.d_skip.size()) == x.cols(), "ssm_output: skip width mismatch");
    Matrix y(x.rows(), x.cols());
    for (int j = 0; j < x.rows(); ++j) {
        const Matrix& cj = p.c[j];
        check_shape(cj.rows() == x.cols() && cj.cols() == h.cols(), "ssm_output: C shape");
        const double* hj = h.row(j);
        const double* xj = x.row(j);
        double* yj = y.row(j);
        for (int r = 0; r < x.cols(); ++r) {
            double s = 0.0;
            const double* cr = cj.row(r);
            for (int c = 0; c < h.cols(); ++c) s += cr[c] * hj[c];
            yj[r] = s + p.d_skip[r] * xj[r];
        }
    }
    return y;
}

GssWeights GssWeights::init(int d, int q, uint64_t seed, const std::string& label) {
    const double sigma = 1.0 / std::sqrt(static_cast<double>(d));
    GssWeights w;
    Rng rng(seed, label);
    w.w_in_right = rng.normal_matrix(d, d, sigma);
    w.b_in_right = Matrix(1, d);
    w.conv_kernel = rng.normal_matrix(kConvKernel, d, 0.5);
    w.conv_bias = Matrix(1, d);
    w.w_in_left = rng.normal_matrix(d, d, sigma);
    w.b_in_left = Matrix(1, d);
    w.w_delta = rng.normal_matrix(d, 1, sigma);
    // softplus(b_delta) ~= 0.5 at init
    w.b_delta = Matrix::filled(1, 1, std::log(std::exp(0.5) - 1.0));
    w.a_log = Matrix(1, q);
    for (int i = 0; i < q; ++i) w.a_log(0, i) = std::log(1.0 + i);
    w.w_b = rng.normal_matrix(d, q, sigma);
    w.r_map = rng.normal_matrix(d, 1, sigma);
    w.w_c = rng.normal_matrix(d, q, sigma);
    w.u_c = rng.normal_matrix(q, d, 1.0 / std::sqrt(static_cast<double>(q)));
    w.d_skip = Matrix::filled(1, d, 1.0);
    w.w_p = rng.normal_matrix(d, d, sigma);
    return w;
}

std::vector<Matrix*> GssWeights::all() {
    return {&w_in_right, &b_in_right, &conv_kernel, &conv_bias, &w_in_left, &b_in_left,
            &w_delta,    &b_delta,    &a_log,       &w_b,       &r_map,     &w_c,
            &u_c,        &d_skip,     &w_p};
}

std::vector<const Matrix*> GssWeights::all() const {
    return {&w_in_right, &b_in_right, &conv_kernel, &conv_bias, &w_in_left, &b_in_left,
            &w_delta,    &b_delta,    &a_log,       &w_b,       &r_map,     &w_c,
            &u_c,        &d_skip,     &w_p};
}

GssVars push_gss(Tape& t, const GssWeights& w, bool trainable) {
    auto put = [&](const Matrix& m) { return trainable ? t.param(m) : t.constant(m); };
    GssVars v;
    v.w_in_right = put(w.w_in_right);
    v.b_in_right = put(w.b_in_right);
    v.conv_kernel = put(w.conv_kernel);
    v.conv_bias = put(w.conv_bias);
    v.w_in_left = put(w.w_in_left);
    v.b_in_left = put(w.b_in_left);
    v.w_delta = put(w.w_delta);
    v.b_delta = put(w.b_delta);
    v.a_log = put(w.a_log);
    v.w_b = put(w.w_b);
    v.r_map = put(w.r_map);
    v.w_c = put(w.w_c);
    v.u_c = put(w.u_c);
    v.d_skip = put(w.d_skip);
    v.w_p = put(w.w_p);
    return v;
}

GssLayerOut gss_layer(Tape& t, Var z_prev, const GssVars& w, int knn_phi, bool residual) {
    // Right branch: linear -> depthwise conv -> SiLU -> graph-traversal SSM.
    Var x = t.silu(t.dwconv1d(t.add_row(t.matmul(z_prev, w.w_in_right), w.b_in_right),
                              w.conv_kernel, w.conv_bias));
    // Left branch: linear -> SiLU gate.
    Var z_left = t.silu(t.add_row(t.matmul(z_prev, w.w_in_left), w.b_in_left));

    // Graph structure comes from the current values of X and is held fixed
    // by the surrounding step.
    auto tree = std::make_shared<SpanningTree>(boruvka_mst(build_knn_graph(t.val(x), knn_phi)));

    // Selective parameters: delta via softplus, A = -exp(a_log) shared.
    Var delta = t.softplus(t.add_row(t.matmul(x, w.w_delta), w.b_delta));  // N x 1
    Var a_row = t.scale(t.exp(w.a_log), -1.0);                             // 1 x Q
    Var abar = t.exp(t.matmul(delta, a_row));                              // N x Q
    Var s = t.mul_row(t.add_scalar(abar, -1.0), t.reciprocal(a_row));      // (abar-1)/a
    Var b_sel = t.matmul(x, w.w_b);                                        // N x Q
    Var u = t.matmul(x, w.r_map);                                          // N x 1
    Var beta = t.mul_col(t.mul(s, b_sel), u);
    Var h = t.tree_scan(abar, beta, tree);

    Var c_sel = t.matmul(x, w.w_c);                                        // N x Q
    Var y = t.add(t.matmul(t.mul(c_sel, h), w.u_c), t.mul_row(x, w.d_skip));

    Var out = t.matmul(t.mul(t.layer_norm_rows(y), z_left), w.w_p);
    if (residual) out = t.add(out, z_prev);
    return {out, tree};
}

}  // namespace hvpl
