#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hvpl/pipeline.hpp"

namespace hvpl {

struct Prediction {
    int video_index = 0;
    int task_id = 0;
    int prompt_row = 0;  // global row over the concatenated video prompts
    int class_id = 0;    // global id, argmax over non-no-object columns
    double confidence = 0.0;
    std::vector<std::vector<uint8_t>> masks;  // per frame, sigmoid(logit) > 0.5
};

struct ClassMetrics {
    double ap = 0.0, ap50 = 0.0, ap75 = 0.0, ar1 = 0.0;
};

struct EvalReport {
    int after_task = 0;
    std::map<int, ClassMetrics> per_class;
    double ap = 0.0, ap50 = 0.0, ap75 = 0.0, ar1 = 0.0;
};

// Spatio-temporal IoU: per-frame intersections and unions summed over frames.
double spatiotemporal_iou(const std::vector<std::vector<uint8_t>>& a,
                          const std::vector<std::vector<uint8_t>>& b);

// Inference on one video under a prompt bundle.
std::vector<Prediction> predict_video(Model& model, const InferenceBundle& bundle,
                                      const FrameFeatures& feats, int video_index);

// Metric computation from predictions against ground-truth videos. AP uses
// the all-point precision envelope per class, averaged over IoU thresholds
// 0.50:0.05:0.95; AR1 keeps only each video's single highest-confidence
// prediction. Classes without ground truth are omitted.
EvalReport compute_metrics(const std::vector<Prediction>& preds,
                           const std::vector<const SyntheticVideo*>& videos);

// Full evaluation over the test splits of tasks 1..upto_task, parallel over
// videos with deterministic aggregation. Throws StateError before any task
// has been trained.
EvalReport evaluate_model(Model& model, const TaskSequence& seq, int upto_task);

struct ForgettingReport {
    std::optional<double> fap, far1;
    std::vector<int> excluded_ap;   // classes with zero first-learned AP
    std::vector<int> excluded_ar1;
};

// Forgetting rates over the evaluation history (history[i] = report after
// task i+1): mean over old classes of the normalized drop between the AP
// when first learned and the final AP, with the 1/(T-t) task weighting.
// Classes whose first-learned value is zero are excluded and reported.
ForgettingReport compute_fap(const std::vector<EvalReport>& history, const TaskSequence& seq);

nlohmann::json metrics_to_json(const std::vector<EvalReport>& history,
                               const ForgettingReport& forgetting, long projection_calls);

// Run-length encoding of a binary mask, row-major, runs alternate starting
// with zeros.
std::vector<int> rle_encode(const std::vector<uint8_t>& mask);
nlohmann::json prediction_to_json(const Prediction& p);

}  // namespace hvpl
