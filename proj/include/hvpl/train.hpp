#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hvpl/eval.hpp"
#include "hvpl/ogc.hpp"
#include "hvpl/pipeline.hpp"
#include "hvpl/tasks.hpp"

namespace hvpl {

struct TrainHooks {
    // Called per projected frame-prompt update (tasks >= 2 with OGC active).
    std::function<void(int task, long step, const Matrix& delta_raw, const Matrix& delta_star,
                       const OrthoSpace& space)>
        on_projection;
    std::function<void(int task, int epoch, double mean_loss)> on_epoch;
};

// Owns the model, optimizer state, the previous task's feature space, the run
// directory and the evaluation history for the whole task sequence.
class Trainer {
public:
    Trainer(TrainConfig cfg, std::string run_dir);

    Model& model() { return model_; }
    const Model& model() const { return model_; }
    const TaskSequence& tasks() const { return tasks_; }
    RunStore& store() { return store_; }
    int trained_upto() const { return trained_upto_; }
    long projection_calls() const { return projection_calls_; }
    const std::vector<EvalReport>& history() const { return history_; }

    // One pass of the per-task optimization: initializes the task's prompts
    // and heads, runs the epochs (decoder trainable only at task 1, frame
    // prompt gradients projected from task 2 on), then rebuilds and persists
    // the representative feature space. Throws StateError out of order.
    void train_task(int task_id, const TrainHooks* hooks = nullptr);

    // Evaluation over tasks 1..trained_upto, appended to the history.
    const EvalReport& evaluate_current();

    // Full sequence: train + evaluate per task, then write metrics.json.
    void run_sequence(const TrainHooks* hooks = nullptr);

    ForgettingReport forgetting() const;
    void write_metrics() const;

    void save_state() const;
    static std::unique_ptr<Trainer> load_state(const std::string& run_dir);

private:
    struct CachedVideo {
        FrameFeatures feats;
        FrameKv kv;
    };
    const CachedVideo& cached(int task_id, int index);

    TrainConfig cfg_;
    Model model_;
    TaskSequence tasks_;
    RunStore store_;
    std::map<std::string, ParamState> opt_states_;
    std::optional<OrthoSpace> prev_space_;
    int trained_upto_ = 0;
    long projection_calls_ = 0;
    std::vector<EvalReport> history_;
    std::map<long, CachedVideo> cache_;
};

}  // namespace hvpl
