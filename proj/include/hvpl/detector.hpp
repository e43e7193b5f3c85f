#pragma once

#include <string>
#include <vector>

#include "hvpl/matrix.hpp"
#include "hvpl/tape.hpp"

namespace hvpl {

struct DetectorConfig {
    int d_model = 64;
    int n_heads = 4;
    int layers = 3;     // cross-attention layers in the frozen frame decoder
    int n_frames = 4;
    int height = 32;
    int width = 32;
    int scales = 2;
    double noise_sigma = 0.1;

    int head_dim() const { return d_model / n_heads; }
    int pixels() const { return height * width; }
};

// Frozen frame-decoder weights, drawn once from the experiment seed and never
// updated afterwards.
struct FrozenDecoderWeights {
    struct Layer {
        Matrix wq, wk, wv, wo;        // D x D (heads packed along columns)
        Matrix mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    };
    std::vector<Layer> layers;
    int n_heads = 0;
    int head_dim = 0;
};

struct InstanceGt {
    int class_id = 0;                              // global class id
    std::vector<std::vector<uint8_t>> masks;       // per frame, H*W visibility bits
    int visible_pixels = 0;
};

struct SyntheticVideo {
    std::string id;
    std::vector<InstanceGt> instances;
    std::vector<std::vector<int>> ownership;       // per frame, H*W -> instance idx or -1
};

struct FrameFeatures {
    std::vector<Matrix> scale1;   // per frame, (H/2 * W/2) x D  (2x downsample)
    std::vector<Matrix> scale2;   // per frame, (H/4 * W/4) x D
    std::vector<Matrix> f_out;    // per frame, (H * W) x D full-resolution embedding
};

// Per-video per-layer key/value projections of the first-scale features.
// They depend only on frozen weights and the video, so callers may
// precompute them once and reuse across steps.
struct FrameKv {
    // [layer][frame] -> (H1W1) x D
    std::vector<std::vector<Matrix>> k, v;
};

struct VideoSpec {
    std::string geom_stream;
    std::string noise_stream;
    std::vector<int> instance_classes;  // global ids; decides instance count
    double noise_sigma = 0.1;
    bool zero_velocity = false;
};

class Detector {
public:
    Detector(DetectorConfig cfg, uint64_t seed);

    const DetectorConfig& config() const { return cfg_; }
    const FrozenDecoderWeights& weights() const { return weights_; }
    uint64_t seed() const { return seed_; }

    Matrix prototype(int class_id) const;       // 1 x D
    Matrix background_prototype() const;        // 1 x D
    Matrix mixed_prototype(int class_id) const; // prototype through the frozen mix
    Matrix mixed_background() const;

    // Deterministic synthetic video + features; throws UsageError when the
    // instance class list is empty.
    SyntheticVideo make_video(const VideoSpec& spec) const;
    FrameFeatures render_features(const SyntheticVideo& video, const VideoSpec& spec) const;

    FrameKv precompute_kv(const FrameFeatures& feats) const;

    // Plain (non-recorded) attention scores of one layer/head between prompt
    // rows and feature rows: softmax(P Wq (F Wk)^T / sqrt(d)).
    Matrix cross_attention_scores(const Matrix& prompts, const Matrix& feats, int layer,
                                  int head) const;

    // Frame decoder on the tape: per frame, `layers` rounds of multi-head
    // cross-attention against the first-scale features, each followed by a
    // two-layer MLP, both with residual connections. Returns one L x D output
    // per frame. When `trace` is non-null the per-layer per-head attention
    // rows are appended to it.
    std::vector<Var> transformer_decode(Tape& t, Var prompts, const FrameFeatures& feats,
                                        const FrameKv* kv = nullptr,
                                        std::vector<Matrix>* trace = nullptr) const;

    // Convenience: decoded prompt features as a plain (N_f * L) x D matrix.
    Matrix decode_to_matrix(const Matrix& prompts, const FrameFeatures& feats) const;

private:
    DetectorConfig cfg_;
    uint64_t seed_ = 0;
    FrozenDecoderWeights weights_;
    Matrix mix_;  // D x D frozen prototype mixing map
};

Matrix avg_pool_2x2(const Matrix& grid, int height, int width);

}  // namespace hvpl
