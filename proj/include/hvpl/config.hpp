#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hvpl/detector.hpp"

#include <json.hpp>

namespace hvpl {

struct AblationFlags {
    bool disable_ogc = false;
    bool disable_gtssm = false;
    bool disable_video_prompt = false;
    bool gss_residual = false;
    bool msa_layernorm = false;
};

// Full experiment configuration. Every random quantity of a run derives from
// `seed` through named streams, so (config, seed) pins the run bit for bit.
struct TrainConfig {
    uint64_t seed = 42;

    int d_model = 64;
    int q_state = 16;
    int n_frames = 4;
    int height = 32;
    int width = 32;
    int n_heads = 4;
    int knn_phi = 4;

    int frame_prompt_len = 6;
    int video_prompt_len = 5;
    int frame_prompt_len_first = 0;  // 0 = frame_prompt_len
    int video_prompt_len_first = 0;

    int gss_layers = 6;
    int msa_layers = 3;
    int detector_layers = 3;
    int scales = 2;

    double xi = 0.7;
    double learning_rate = 5e-5;
    int epochs_per_task = 30;
    int b_videos = 0;  // 0 = max(6, task class count)

    std::vector<int> class_split = {4, 2};
    int train_videos_per_task = 40;
    int test_videos_per_task = 20;
    int instances_min = 1;
    int instances_max = 2;
    double noise_sigma = 0.1;
    int class_budget = 0;  // 0 = exactly the split total

    AblationFlags ablation;
    std::vector<uint64_t> ablation_seeds = {42, 43, 44, 45, 46};

    int lpf(int task) const {
        return (task == 1 && frame_prompt_len_first > 0) ? frame_prompt_len_first
                                                         : frame_prompt_len;
    }
    int lpv(int task) const {
        return (task == 1 && video_prompt_len_first > 0) ? video_prompt_len_first
                                                         : video_prompt_len;
    }
    int n_tasks() const { return static_cast<int>(class_split.size()); }
    int total_classes() const {
        int s = 0;
        for (int c : class_split) s += c;
        return s;
    }
    int effective_b(int task_classes) const {
        return b_videos > 0 ? b_videos : std::max(6, task_classes);
    }

    DetectorConfig detector_config() const {
        DetectorConfig d;
        d.d_model = d_model;
        d.n_heads = n_heads;
        d.layers = detector_layers;
        d.n_frames = n_frames;
        d.height = height;
        d.width = width;
        d.scales = scales;
        d.noise_sigma = noise_sigma;
        return d;
    }

    void validate() const;  // throws ConfigError with the offending field

    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
    static TrainConfig from_file(const std::string& path);
};

}  // namespace hvpl
