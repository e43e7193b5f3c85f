#include "hvpl/tasks.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "hvpl/rng.hpp"

namespace fs = std::filesystem;

namespace hvpl {

int TaskSequence::task_of_class(int class_id) const {
    for (const Task& t : tasks)
        for (int c : t.label_space)
            if (c == class_id) return t.id;
    throw StateError("task_of_class: unknown class id " + std::to_string(class_id));
}

namespace {

VideoEntry make_entry(const TrainConfig& cfg, const Detector& det, const Task& task,
                      const std::string& split, int index) {
    const std::string base =
        "vid/t" + std::to_string(task.id) + "/" + split + "/" + std::to_string(index);
    VideoSpec spec;
    spec.geom_stream = base + "/geom";
    spec.noise_stream = base + "/noise";
    spec.noise_sigma = cfg.noise_sigma;

    Rng pick(cfg.seed, base + "/classes");
    const int want = std::min(pick.uniform_int(cfg.instances_min, cfg.instances_max),
                              static_cast<int>(task.label_space.size()));
    // First instance cycles through the label space so every class shows up
    // in every split; the rest are distinct draws.
    std::vector<int> pool = task.label_space;
    const int forced = task.label_space[index % task.label_space.size()];
    spec.instance_classes.push_back(forced);
    pool.erase(std::find(pool.begin(), pool.end(), forced));
    pick.shuffle(pool);
    for (int k = 1; k < want; ++k) spec.instance_classes.push_back(pool[k - 1]);

    VideoEntry entry;
    entry.spec = spec;
    entry.video = det.make_video(spec);
    return entry;
}

}  // namespace

TaskSequence generate_tasks(const TrainConfig& cfg, const Detector& det) {
    cfg.validate();
    if (cfg.class_budget > 0 && cfg.class_budget < cfg.total_classes())
        throw ConfigError("generate_tasks: class budget below the split total");

    TaskSequence seq;
    int next_class = 1;
    for (size_t t = 0; t < cfg.class_split.size(); ++t) {
        Task task;
        task.id = static_cast<int>(t) + 1;
        for (int k = 0; k < cfg.class_split[t]; ++k) task.label_space.push_back(next_class++);
        for (int i = 0; i < cfg.train_videos_per_task; ++i)
            task.train.push_back(make_entry(cfg, det, task, "train", i));
        for (int i = 0; i < cfg.test_videos_per_task; ++i)
            task.test.push_back(make_entry(cfg, det, task, "test", i));
        seq.tasks.push_back(std::move(task));
    }
    return seq;
}

RunStore::RunStore(std::string dir) : dir_(std::move(dir)) {
    fs::create_directories(dir_);
    fs::create_directories(data_dir());
    fs::create_directories(state_dir());
}

std::string RunStore::data_dir() const { return (fs::path(dir_) / "data").string(); }
std::string RunStore::state_dir() const { return (fs::path(dir_) / "state").string(); }

namespace {
std::string manifest_name(int task_id) {
    return "task" + std::to_string(task_id) + "_train.json";
}
}  // namespace

void RunStore::begin_task(const Task& task) {
    // Rehearsal-free: drop every earlier task's training manifest first.
    for (int t = 1; t < task.id; ++t) fs::remove(fs::path(data_dir()) / manifest_name(t));

    nlohmann::json manifest;
    manifest["task"] = task.id;
    manifest["classes"] = task.label_space;
    nlohmann::json vids = nlohmann::json::array();
    for (const auto& e : task.train) {
        nlohmann::json v;
        v["id"] = e.spec.geom_stream;
        v["classes"] = e.spec.instance_classes;
        vids.push_back(v);
    }
    manifest["train_videos"] = vids;
    std::ofstream os(fs::path(data_dir()) / manifest_name(task.id), std::ios::trunc);
    os << manifest.dump(2) << "\n";
    os.close();

    audit_rehearsal_free(task.id);
}

void RunStore::finish_task(int task_id) {
    fs::remove(fs::path(data_dir()) / manifest_name(task_id));
}

void RunStore::audit_rehearsal_free(int current_task) const {
    for (int t = 1; t < current_task; ++t) {
        const fs::path p = fs::path(data_dir()) / manifest_name(t);
        if (fs::exists(p))
            throw StateError("rehearsal-free audit: training data of task " + std::to_string(t) +
                             " is still readable at " + p.string());
    }
}

}  // namespace hvpl
