#include "hvpl/detector.hpp"

#include <algorithm>
#include <cmath>

#include "hvpl/rng.hpp"

namespace hvpl {

Detector::Detector(DetectorConfig cfg, uint64_t seed) : cfg_(cfg), seed_(seed) {
    if (cfg_.d_model % cfg_.n_heads != 0)
        throw ConfigError("detector: d_model must be divisible by n_heads");
    if (cfg_.height % 4 != 0 || cfg_.width % 4 != 0)
        throw ConfigError("detector: height and width must be divisible by 4");

    const int d = cfg_.d_model;
    const double sigma = 1.0 / std::sqrt(static_cast<double>(d));
    weights_.n_heads = cfg_.n_heads;
    weights_.head_dim = cfg_.head_dim();
    for (int l = 0; l < cfg_.layers; ++l) {
        const std::string base = "det/L" + std::to_string(l) + "/";
        FrozenDecoderWeights::Layer layer;
        layer.wq = Rng(seed, base + "wq").normal_matrix(d, d, sigma);
        layer.wk = Rng(seed, base + "wk").normal_matrix(d, d, sigma);
        layer.wv = Rng(seed, base + "wv").normal_matrix(d, d, sigma);
        layer.wo = Rng(seed, base + "wo").normal_matrix(d, d, sigma);
        layer.mlp_w1 = Rng(seed, base + "m1").normal_matrix(d, d, sigma);
        layer.mlp_b1 = Matrix(1, d);
        layer.mlp_w2 = Rng(seed, base + "m2").normal_matrix(d, d, sigma);
        layer.mlp_b2 = Matrix(1, d);
        weights_.layers.push_back(std::move(layer));
    }
    mix_ = Rng(seed, "det/mix").normal_matrix(d, d, sigma);
}

Matrix Detector::prototype(int class_id) const {
    const double sigma = 1.0 / std::sqrt(static_cast<double>(cfg_.d_model));
    return Rng(seed_, "proto/c" + std::to_string(class_id)).normal_matrix(1, cfg_.d_model, sigma);
}

Matrix Detector::background_prototype() const {
    const double sigma = 1.0 / std::sqrt(static_cast<double>(cfg_.d_model));
    return Rng(seed_, "proto/bg").normal_matrix(1, cfg_.d_model, sigma);
}

Matrix Detector::mixed_prototype(int class_id) const { return matmul(prototype(class_id), mix_); }

Matrix Detector::mixed_background() const { return matmul(background_prototype(), mix_); }

SyntheticVideo Detector::make_video(const VideoSpec& spec) const {
    if (spec.instance_classes.empty())
        throw UsageError("make_video: instance class list must not be empty");

    const int h = cfg_.height, w = cfg_.width, nf = cfg_.n_frames;
    SyntheticVideo video;
    video.id = spec.geom_stream;
    video.ownership.assign(nf, std::vector<int>(h * w, -1));

    Rng geom(seed_, spec.geom_stream);

    struct Rect {
        int rh, rw, y0, x0, vy, vx;
    };
    std::vector<Rect> rects;
    for (size_t i = 0; i < spec.instance_classes.size(); ++i) {
        Rect r;
        r.rh = geom.uniform_int(8, 14);
        r.rw = geom.uniform_int(8, 14);
        r.y0 = geom.uniform_int(0, h - r.rh);
        r.x0 = geom.uniform_int(0, w - r.rw);
        r.vy = spec.zero_velocity ? 0 : geom.uniform_int(-2, 2);
        r.vx = spec.zero_velocity ? 0 : geom.uniform_int(-2, 2);
        rects.push_back(r);
    }

    // Paint in order; a later instance occludes earlier ones.
    for (int f = 0; f < nf; ++f) {
        auto& own = video.ownership[f];
        for (size_t i = 0; i < rects.size(); ++i) {
            const Rect& r = rects[i];
            const int y = std::clamp(r.y0 + f * r.vy, 0, h - r.rh);
            const int x = std::clamp(r.x0 + f * r.vx, 0, w - r.rw);
            for (int yy = y; yy < y + r.rh; ++yy)
                for (int xx = x; xx < x + r.rw; ++xx) own[yy * w + xx] = static_cast<int>(i);
        }
    }

    for (size_t i = 0; i < spec.instance_classes.size(); ++i) {
        InstanceGt gt;
        gt.class_id = spec.instance_classes[i];
        gt.masks.assign(nf, std::vector<uint8_t>(h * w, 0));
        for (int f = 0; f < nf; ++f) {
            const auto& own = video.ownership[f];
            for (int p = 0; p < h * w; ++p) {
                if (own[p] == static_cast<int>(i)) {
                    gt.masks[f][p] = 1;
                    ++gt.visible_pixels;
                }
            }
        }
        video.instances.push_back(std::move(gt));
    }
    return video;
}

Matrix avg_pool_2x2(const Matrix& grid, int height, int width) {
    const int d = grid.cols();
    const int oh = height / 2, ow = width / 2;
    Matrix out(oh * ow, d);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double* o = out.row(y * ow + x);
            for (int dy = 0; dy < 2; ++dy) {
                const double* r0 = grid.row((2 * y + dy) * width + 2 * x);
                const double* r1 = grid.row((2 * y + dy) * width + 2 * x + 1);
                for (int j = 0; j < d; ++j) o[j] += 0.25 * (r0[j] + r1[j]);
            }
        }
    }
    return out;
}

FrameFeatures Detector::render_features(const SyntheticVideo& video, const VideoSpec& spec) const {
    const int h = cfg_.height, w = cfg_.width, nf = cfg_.n_frames, d = cfg_.d_model;
    FrameFeatures feats;

    const Matrix bg = mixed_background();
    std::vector<int> class_ids;
    std::vector<Matrix> mixed;
    for (const auto& inst : video.instances) {
        class_ids.push_back(inst.class_id);
        mixed.push_back(mixed_prototype(inst.class_id));
    }

    Rng noise(seed_, spec.noise_stream);
    for (int f = 0; f < nf; ++f) {
        Matrix grid(h * w, d);
        const auto& own = video.ownership[f];
        for (int p = 0; p < h * w; ++p) {
            const Matrix& proto = own[p] >= 0 ? mixed[own[p]] : bg;
            double* g = grid.row(p);
            for (int j = 0; j < d; ++j) g[j] = proto(0, j) + spec.noise_sigma * noise.normal();
        }
        feats.scale1.push_back(avg_pool_2x2(grid, h, w));
        if (cfg_.scales > 1) feats.scale2.push_back(avg_pool_2x2(feats.scale1.back(), h / 2, w / 2));
        feats.f_out.push_back(std::move(grid));
    }
    return feats;
}

FrameKv Detector::precompute_kv(const FrameFeatures& feats) const {
    FrameKv kv;
    kv.k.resize(weights_.layers.size());
    kv.v.resize(weights_.layers.size());
    for (size_t l = 0; l < weights_.layers.size(); ++l) {
        for (const Matrix& f : feats.scale1) {
            kv.k[l].push_back(matmul(f, weights_.layers[l].wk));
            kv.v[l].push_back(matmul(f, weights_.layers[l].wv));
        }
    }
    return kv;
}

Matrix Detector::cross_attention_scores(const Matrix& prompts, const Matrix& feats, int layer,
                                        int head) const {
    check_shape(prompts.cols() == cfg_.d_model && feats.cols() == cfg_.d_model,
                "cross_attention_scores: feature width mismatch");
    if (layer < 0 || layer >= static_cast<int>(weights_.layers.size()))
        throw UsageError("cross_attention_scores: layer out of range");
    if (head < 0 || head >= cfg_.n_heads) throw UsageError("cross_attention_scores: head out of range");

    const int dh = cfg_.head_dim();
    const auto& lw = weights_.layers[layer];
    auto head_cols = [&](const Matrix& m, const Matrix& w) {
        Matrix proj = matmul(m, w);
        Matrix out(proj.rows(), dh);
        for (int i = 0; i < proj.rows(); ++i)
            for (int j = 0; j < dh; ++j) out(i, j) = proj(i, head * dh + j);
        return out;
    };
    Matrix q = head_cols(prompts, lw.wq);
    Matrix k = head_cols(feats, lw.wk);
    Matrix logits = scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dh)));
    return softmax_rows(logits);
}

std::vector<Var> Detector::transformer_decode(Tape& t, Var prompts, const FrameFeatures& feats,
                                              const FrameKv* kv,
                                              std::vector<Matrix>* trace) const {
    const int dh = cfg_.head_dim();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<Var> out;
    for (int f = 0; f < cfg_.n_frames; ++f) {
        Var z = prompts;
        for (size_t l = 0; l < weights_.layers.size(); ++l) {
            const auto& lw = weights_.layers[l];
            Var kfull = t.constant(kv ? kv->k[l][f] : matmul(feats.scale1[f], lw.wk));
            Var vfull = t.constant(kv ? kv->v[l][f] : matmul(feats.scale1[f], lw.wv));
            Var q = t.matmul(z, t.constant(lw.wq));

            std::vector<Var> heads;
            for (int h = 0; h < cfg_.n_heads; ++h) {
                Var qh = t.slice_cols(q, h * dh, (h + 1) * dh);
                Var kh = t.slice_cols(kfull, h * dh, (h + 1) * dh);
                Var vh = t.slice_cols(vfull, h * dh, (h + 1) * dh);
                Var scores = t.softmax_rows(t.scale(t.matmul_nt(qh, kh), inv_sqrt_d));
                if (trace) trace->push_back(t.val(scores));
                heads.push_back(t.matmul(scores, vh));
            }
            Var attn = t.matmul(t.concat_cols(heads), t.constant(lw.wo));
            z = t.add(z, attn);
            Var hmid = t.silu(t.add_row(t.matmul(z, t.constant(lw.mlp_w1)), t.constant(lw.mlp_b1)));
            Var mlp = t.add_row(t.matmul(hmid, t.constant(lw.mlp_w2)), t.constant(lw.mlp_b2));
            z = t.add(z, mlp);
        }
        out.push_back(z);
    }
    return out;
}

Matrix Detector::decode_to_matrix(const Matrix& prompts, const FrameFeatures& feats) const {
    Tape t;
    Var p = t.constant(prompts);
    std::vector<Var> frames = transformer_decode(t, p, feats);
    std::vector<Matrix> vals;
    for (Var f : frames) vals.push_back(t.val(f));
    return concat_rows(vals);
}

}  // namespace hvpl
