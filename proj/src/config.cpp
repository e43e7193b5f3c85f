#include "hvpl/config.hpp"

#include <fstream>

namespace hvpl {

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
    if (xi < 0.0 || xi > 1.0) fail("xi must lie in [0, 1]");
    if (d_model <= 0 || q_state <= 0) fail("dims must be positive");
    if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
    if (d_model % n_frames != 0) fail("d_model must be divisible by n_frames (PCA reduction)");
    if (height % 4 != 0 || width % 4 != 0) fail("height and width must be divisible by 4");
    if (frame_prompt_len < 1 || video_prompt_len < 1) fail("prompt lengths must be >= 1");
    if (knn_phi < 1) fail("knn_phi must be >= 1");
    for (int t = 1; t <= n_tasks(); ++t)
        if (knn_phi >= n_frames * lpf(t)) fail("knn_phi must be below the flattened sequence length");
    if (class_split.empty()) fail("class_split must not be empty");
    for (int c : class_split)
        if (c < 1) fail("class_split entries must be >= 1");
    if (class_budget > 0 && class_budget < total_classes())
        fail("class budget below the split total");
    if (train_videos_per_task < 1 || test_videos_per_task < 1) fail("video counts must be >= 1");
    if (instances_min < 1 || instances_max < instances_min) fail("bad instance count range");
    if (epochs_per_task < 1) fail("epochs_per_task must be >= 1");
    if (learning_rate <= 0.0) fail("learning rate must be positive");
    for (int t = 1; t <= n_tasks(); ++t) {
        const int b = effective_b(class_split[t - 1]);
        if (b > train_videos_per_task) fail("B exceeds the train videos available per task");
    }
    if (ablation_seeds.empty()) fail("ablation_seeds must not be empty");
}

namespace {

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

nlohmann::json TrainConfig::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["d_model"] = d_model;
    j["q_state"] = q_state;
    j["n_frames"] = n_frames;
    j["height"] = height;
    j["width"] = width;
    j["n_heads"] = n_heads;
    j["knn_phi"] = knn_phi;
    j["frame_prompt_len"] = frame_prompt_len;
    j["video_prompt_len"] = video_prompt_len;
    j["frame_prompt_len_first"] = frame_prompt_len_first;
    j["video_prompt_len_first"] = video_prompt_len_first;
    j["gss_layers"] = gss_layers;
    j["msa_layers"] = msa_layers;
    j["detector_layers"] = detector_layers;
    j["scales"] = scales;
    j["xi"] = xi;
    j["learning_rate"] = learning_rate;
    j["epochs_per_task"] = epochs_per_task;
    j["b_videos"] = b_videos;
    j["class_split"] = class_split;
    j["train_videos_per_task"] = train_videos_per_task;
    j["test_videos_per_task"] = test_videos_per_task;
    j["instances_min"] = instances_min;
    j["instances_max"] = instances_max;
    j["noise_sigma"] = noise_sigma;
    j["class_budget"] = class_budget;
    j["ablation"] = {{"disable_ogc", ablation.disable_ogc},
                     {"disable_gtssm", ablation.disable_gtssm},
                     {"disable_video_prompt", ablation.disable_video_prompt},
                     {"gss_residual", ablation.gss_residual},
                     {"msa_layernorm", ablation.msa_layernorm}};
    j["ablation_seeds"] = ablation_seeds;
    return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    get_if(j, "seed", c.seed);
    get_if(j, "d_model", c.d_model);
    get_if(j, "q_state", c.q_state);
    get_if(j, "n_frames", c.n_frames);
    get_if(j, "height", c.height);
    get_if(j, "width", c.width);
    get_if(j, "n_heads", c.n_heads);
    get_if(j, "knn_phi", c.knn_phi);
    get_if(j, "frame_prompt_len", c.frame_prompt_len);
    get_if(j, "video_prompt_len", c.video_prompt_len);
    get_if(j, "frame_prompt_len_first", c.frame_prompt_len_first);
    get_if(j, "video_prompt_len_first", c.video_prompt_len_first);
    get_if(j, "gss_layers", c.gss_layers);
    get_if(j, "msa_layers", c.msa_layers);
    get_if(j, "detector_layers", c.detector_layers);
    get_if(j, "scales", c.scales);
    get_if(j, "xi", c.xi);
    get_if(j, "learning_rate", c.learning_rate);
    get_if(j, "epochs_per_task", c.epochs_per_task);
    get_if(j, "b_videos", c.b_videos);
    get_if(j, "class_split", c.class_split);
    get_if(j, "train_videos_per_task", c.train_videos_per_task);
    get_if(j, "test_videos_per_task", c.test_videos_per_task);
    get_if(j, "instances_min", c.instances_min);
    get_if(j, "instances_max", c.instances_max);
    get_if(j, "noise_sigma", c.noise_sigma);
    get_if(j, "class_budget", c.class_budget);
    if (j.contains("ablation")) {
        const auto& a = j.at("ablation");
        get_if(a, "disable_ogc", c.ablation.disable_ogc);
        get_if(a, "disable_gtssm", c.ablation.disable_gtssm);
        get_if(a, "disable_video_prompt", c.ablation.disable_video_prompt);
        get_if(a, "gss_residual", c.ablation.gss_residual);
        get_if(a, "msa_layernorm", c.ablation.msa_layernorm);
    }
    get_if(j, "ablation_seeds", c.ablation_seeds);
    return c;
}

TrainConfig TrainConfig::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("config: cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(is, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) throw ConfigError("config: invalid JSON in " + path);
    return from_json(j);
}

}  // namespace hvpl
