#include "hvpl/ogc.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "hvpl/rng.hpp"

namespace fs = std::filesystem;

namespace hvpl {

void svd_split(const Matrix& o, double xi, Matrix& v1_out, Matrix& v0_out,
               std::vector<double>& s_out) {
    if (xi < 0.0 || xi > 1.0) throw ConfigError("svd_split: xi must lie in [0, 1]");
    const int d = o.cols();
    SvdResult dec = svd(o, /*full_v=*/true);
    s_out = dec.s;
    const int keep = static_cast<int>(std::floor(xi * d));
    v1_out = Matrix(d, keep);
    v0_out = Matrix(d, d - keep);
    for (int r = 0; r < d; ++r) {
        for (int c = 0; c < keep; ++c) v1_out(r, c) = dec.v(r, c);
        for (int c = keep; c < d; ++c) v0_out(r, c - keep) = dec.v(r, c);
    }
}

Matrix project_gradient(const Matrix& delta, const OrthoSpace& space) {
    check_shape(delta.cols() == space.v0.rows(), "project_gradient: width mismatch");
    if (space.v0.cols() == 0) return Matrix(delta.rows(), delta.cols());
    return matmul(matmul(delta, space.v0), transpose(space.v0));
}

OrthoSpace build_feature_space(const FeatureSpaceInputs& in) {
    const Detector& det = *in.detector;
    const int d = det.config().d_model;
    const int nf = det.config().n_frames;
    const int lp = in.frame_prompts.rows();
    const int n_videos = static_cast<int>(in.features.size());

    if (d % nf != 0)
        throw ConfigError("build_feature_space: feature dim must be divisible by frame count");
    if (in.b_videos > n_videos)
        throw CoverageError("build_feature_space: not enough train videos to sample");
    if (in.b_videos < static_cast<int>(in.task_classes.size()))
        throw CoverageError("build_feature_space: B must be at least the task's class count");

    // Stratified sampling: walk a shuffled order, prefer videos covering
    // still-uncovered classes, then fill the remaining slots.
    std::vector<int> order(n_videos);
    for (int i = 0; i < n_videos; ++i) order[i] = i;
    Rng rng(in.seed, "ogc/t" + std::to_string(in.task_id));
    rng.shuffle(order);

    std::set<int> uncovered(in.task_classes.begin(), in.task_classes.end());
    std::vector<int> chosen;
    std::vector<char> used(n_videos, 0);
    for (int idx : order) {
        if (static_cast<int>(chosen.size()) >= in.b_videos) break;
        bool helps = false;
        for (int c : in.video_classes[idx])
            if (uncovered.count(c)) helps = true;
        if (!helps) continue;
        chosen.push_back(idx);
        used[idx] = 1;
        for (int c : in.video_classes[idx]) uncovered.erase(c);
    }
    for (int idx : order) {
        if (static_cast<int>(chosen.size()) >= in.b_videos) break;
        if (!used[idx]) {
            chosen.push_back(idx);
            used[idx] = 1;
        }
    }
    if (!uncovered.empty())
        throw CoverageError("build_feature_space: sampled videos do not cover all task classes");
    std::sort(chosen.begin(), chosen.end());

    const int k = d / nf;
    OrthoSpace space;
    space.task_id = in.task_id;
    space.xi = in.xi;
    space.b_videos = in.b_videos;
    space.seed = in.seed;
    space.o = Matrix(in.b_videos * lp, d);

    int out_row = 0;
    for (int idx : chosen) {
        // (N_f * L) x D decoded prompt features for this video.
        const Matrix z = det.decode_to_matrix(in.frame_prompts, *in.features[idx]);
        const PcaResult pca = pca_reduce(z, k);
        // Re-concatenate the per-frame slices of each prompt position.
        for (int p = 0; p < lp; ++p, ++out_row) {
            double* row = space.o.row(out_row);
            for (int f = 0; f < nf; ++f)
                for (int c = 0; c < k; ++c) row[f * k + c] = pca.reduced(f * lp + p, c);
        }
    }
    svd_split(space.o, in.xi, space.v1, space.v0, space.s);
    return space;
}

void optimizer_apply(const OptimizerConfig& cfg, Matrix& param, const Matrix& grad,
                     ParamState& state) {
    check_shape(param.same_shape(grad), "optimizer_apply: shape mismatch");
    if (cfg.kind == OptimizerConfig::Kind::Sgd) {
        for (size_t i = 0; i < param.size(); ++i) param.data()[i] -= cfg.lr * grad.data()[i];
        return;
    }
    if (state.m.empty()) {
        state.m = Matrix(param.rows(), param.cols());
        state.v = Matrix(param.rows(), param.cols());
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < param.size(); ++i) {
        const double g = grad.data()[i];
        double& m = state.m.data()[i];
        double& v = state.v.data()[i];
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        param.data()[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

void apply_projected_update(const OptimizerConfig& cfg, Matrix& p_frm, const Matrix& delta_star,
                            ParamState& state, int task) {
    if (task < 2)
        throw UsageError("apply_projected_update: projection applies from the second task only");
    optimizer_apply(cfg, p_frm, delta_star, state);
}

namespace {

std::string space_stem(int task_id) { return "ortho_space_t" + std::to_string(task_id); }

}  // namespace

size_t persist_space(const OrthoSpace& space, const std::string& dir, MatDType dtype) {
    fs::create_directories(dir);
    const fs::path bin = fs::path(dir) / (space_stem(space.task_id) + ".hvpl");
    const fs::path sidecar = fs::path(dir) / (space_stem(space.task_id) + ".json");

    {
        std::ofstream os(bin, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("persist_space: cannot write " + bin.string());
        write_record(os, space.o, dtype);
        write_record(os, space.v1, dtype);
        write_record(os, space.v0, dtype);
        write_record(os, space.s, dtype);
    }
    nlohmann::json meta = {{"xi", space.xi},
                           {"task", space.task_id},
                           {"b", space.b_videos},
                           {"seed", space.seed}};
    std::ofstream js(sidecar, std::ios::trunc);
    js << meta.dump(2) << "\n";
    js.close();

    // Only the most recent space survives on disk.
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("ortho_space_t", 0) != 0) continue;
        if (name == bin.filename().string() || name == sidecar.filename().string()) continue;
        fs::remove(entry.path());
    }
    return static_cast<size_t>(fs::file_size(bin));
}

OrthoSpace load_space(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_space: cannot open " + path);
    OrthoSpace space;
    space.o = read_record(is).as_matrix();
    space.v1 = read_record(is).as_matrix();
    space.v0 = read_record(is).as_matrix();
    space.s = read_record(is).as_vector();

    const fs::path sidecar = fs::path(path).replace_extension(".json");
    std::ifstream js(sidecar);
    if (!js) throw IoError("load_space: missing sidecar " + sidecar.string());
    nlohmann::json meta = nlohmann::json::parse(js, nullptr, /*allow_exceptions=*/false);
    if (meta.is_discarded()) throw IoError("load_space: corrupt sidecar " + sidecar.string());
    space.xi = meta.at("xi").get<double>();
    space.task_id = meta.at("task").get<int>();
    space.b_videos = meta.at("b").get<int>();
    space.seed = meta.at("seed").get<uint64_t>();
    return space;
}

std::optional<std::string> find_space_file(const std::string& dir) {
    if (!fs::exists(dir)) return std::nullopt;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("ortho_space_t", 0) == 0 && entry.path().extension() == ".hvpl")
            return entry.path().string();
    }
    return std::nullopt;
}

}  // namespace hvpl
