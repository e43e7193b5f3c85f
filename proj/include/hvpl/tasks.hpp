#pragma once

#include <string>
#include <vector>

#include "hvpl/config.hpp"
#include "hvpl/detector.hpp"

namespace hvpl {

struct VideoEntry {
    VideoSpec spec;
    SyntheticVideo video;  // geometry and ground truth; features render on demand
};

struct Task {
    int id = 0;                    // 1-based
    std::vector<int> label_space;  // global class ids
    std::vector<VideoEntry> train, test;
};

struct TaskSequence {
    std::vector<Task> tasks;

    const Task& task(int id) const { return tasks.at(id - 1); }
    int count() const { return static_cast<int>(tasks.size()); }
    // Task at which a global class id is first (and only) learned.
    int task_of_class(int class_id) const;
};

// Builds the full task sequence: disjoint label partitions following
// class_split, per-task train/test synthetic videos with deterministic
// stream labels, class prototypes fixed per global id. Instance classes are
// distinct within a video and cycle through the label space so every class
// appears in both splits.
TaskSequence generate_tasks(const TrainConfig& cfg, const Detector& det);

// Run-directory bookkeeping for the rehearsal-free constraint: training data
// manifests exist only while their task is the one being trained.
class RunStore {
public:
    explicit RunStore(std::string dir);
    const std::string& dir() const { return dir_; }
    std::string data_dir() const;
    std::string state_dir() const;

    // Deletes train manifests of earlier tasks, writes this task's manifest,
    // then audits.
    void begin_task(const Task& task);
    void finish_task(int task_id);
    // Throws StateError if any training manifest of a task < current_task is
    // still readable in the run directory.
    void audit_rehearsal_free(int current_task) const;

private:
    std::string dir_;
};

}  // namespace hvpl
