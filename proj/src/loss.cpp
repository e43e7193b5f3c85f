#include "hvpl/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hvpl {

std::vector<int> hungarian(const Matrix& cost) {
    // Solve with rows as the smaller side; transpose if needed.
    const bool flip = cost.rows() > cost.cols();
    const int n = flip ? cost.cols() : cost.rows();
    const int m = flip ? cost.rows() : cost.cols();
    auto at = [&](int i, int j) { return flip ? cost(j, i) : cost(i, j); };

    const double inf = std::numeric_limits<double>::infinity();
    // 1-based potentials over rows (u) and columns (v); way[j] backtracks the
    // augmenting path, p[j] is the row matched to column j.
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<int> p(m + 1, 0), way(m + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }

    std::vector<int> row_to_col(cost.rows(), -1);
    for (int j = 1; j <= m; ++j) {
        if (p[j] == 0) continue;
        const int small = p[j] - 1, big = j - 1;
        if (flip)
            row_to_col[big] = small;
        else
            row_to_col[small] = big;
    }
    return row_to_col;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Detached per-pair mask costs from raw logit values.
void pair_mask_costs(const Matrix& mask_logits, int n_prompts, int n_frames, int prompt,
                     const std::vector<uint8_t>& gt, double* dice_out, double* bce_out) {
    const int hw = mask_logits.cols();
    double inter = 0.0, psum = 0.0, gsum = 0.0, bce = 0.0;
    for (int f = 0; f < n_frames; ++f) {
        const double* z = mask_logits.row(f * n_prompts + prompt);
        const uint8_t* g = gt.data() + static_cast<size_t>(f) * hw;
        for (int j = 0; j < hw; ++j) {
            const double pz = sigmoid(z[j]);
            inter += pz * g[j];
            psum += pz;
            gsum += g[j];
            bce += std::max(z[j], 0.0) - z[j] * g[j] + std::log1p(std::exp(-std::fabs(z[j])));
        }
    }
    *dice_out = 1.0 - (2.0 * inter + 1.0) / (psum + gsum + 1.0);
    *bce_out = bce / (static_cast<double>(n_frames) * hw);
}

}  // namespace

LossResult set_prediction_loss(Tape& t, const PromptOutputs& pred,
                               const std::vector<GtInstanceRef>& gts,
                               const std::vector<int>* fixed_assignment) {
    const Matrix& cls = t.val(pred.class_logits);
    const Matrix& ml = t.val(pred.mask_logits);
    if (!is_finite(cls) || !is_finite(ml))
        throw NumericError("set_prediction_loss: non-finite predictions");
    check_shape(cls.rows() == pred.n_prompts, "set_prediction_loss: class row mismatch");
    check_shape(ml.rows() == pred.n_prompts * pred.n_frames,
                "set_prediction_loss: mask row mismatch");

    const int n_classes = cls.cols() - 1;  // last column is no-object
    const int g_count = static_cast<int>(gts.size());

    // Detached log-probabilities for the matching cost.
    Matrix logp(cls.rows(), cls.cols());
    for (int i = 0; i < cls.rows(); ++i) {
        double mx = cls(i, 0);
        for (int j = 1; j < cls.cols(); ++j) mx = std::max(mx, cls(i, j));
        double z = 0.0;
        for (int j = 0; j < cls.cols(); ++j) z += std::exp(cls(i, j) - mx);
        const double lse = mx + std::log(z);
        for (int j = 0; j < cls.cols(); ++j) logp(i, j) = cls(i, j) - lse;
    }

    std::vector<int> assignment(pred.n_prompts, -1);
    if (fixed_assignment) {
        assignment = *fixed_assignment;
    } else if (g_count > 0) {
        Matrix cost(pred.n_prompts, g_count);
        for (int p = 0; p < pred.n_prompts; ++p) {
            for (int g = 0; g < g_count; ++g) {
                check_shape(gts[g].local_class >= 0 && gts[g].local_class < n_classes,
                            "set_prediction_loss: class index out of range");
                double dice, bce;
                pair_mask_costs(ml, pred.n_prompts, pred.n_frames, p, *gts[g].mask, &dice, &bce);
                cost(p, g) = 2.0 * (-logp(p, gts[g].local_class)) + 5.0 * dice + 5.0 * bce;
            }
        }
        assignment = hungarian(cost);
    }

    // Recorded objective: weighted terms for matched pairs, plain no-object
    // classification for the rest.
    std::vector<Var> terms;
    for (int p = 0; p < pred.n_prompts; ++p) {
        const int g = assignment[p];
        if (g < 0) {
            terms.push_back(t.ce_logits_row(pred.class_logits, p, n_classes));
            continue;
        }
        auto rows = std::make_shared<std::vector<int>>();
        for (int f = 0; f < pred.n_frames; ++f) rows->push_back(f * pred.n_prompts + p);
        terms.push_back(t.scale(t.ce_logits_row(pred.class_logits, p, gts[g].local_class), 2.0));
        terms.push_back(t.scale(t.dice_rows(pred.mask_logits, rows, gts[g].mask), 5.0));
        terms.push_back(t.scale(t.bce_rows(pred.mask_logits, rows, gts[g].mask), 5.0));
    }
    Var total = terms.front();
    for (size_t i = 1; i < terms.size(); ++i) total = t.add(total, terms[i]);
    return {total, assignment};
}

}  // namespace hvpl
