#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hvpl/config.hpp"
#include "hvpl/detector.hpp"
#include "hvpl/loss.hpp"
#include "hvpl/tasks.hpp"
#include "hvpl/video_decoder.hpp"

namespace hvpl {

struct TaskParams {
    int task_id = 0;
    std::vector<int> label_space;
    Matrix p_frm;
    Matrix p_vid;
    TaskHeads heads;
};

// Everything the pipeline owns: the frozen frame-level detector, the video
// context decoder (trainable during task 1 only) and the per-task prompts and
// heads accumulated over the sequence.
struct Model {
    TrainConfig cfg;
    Detector detector;
    VideoDecoderWeights vdec;
    std::vector<TaskParams> tasks;

    explicit Model(TrainConfig config);

    TaskParams& task_params(int task_id);
    const TaskParams& task_params(int task_id) const;
    bool has_task(int task_id) const;

    // Prompt bank / heads view over tasks 1..upto.
    InferenceBundle bundle(int upto_task) const;
    // Single-task bundle used by the training step.
    InferenceBundle bundle_for_task(int task_id) const;
};

struct ParamRef {
    std::string name;
    Var var;
    Matrix* target = nullptr;
};

struct RouteOutput {
    int task_id = 0;
    std::vector<int> classes;  // classifier column -> global class id
    int row_begin = 0;
    int row_count = 0;
    Var class_logits;  // rows x (K+1)
    Var mask_logits;   // (N_f * rows) x HW, frame-major
};

struct ForwardOptions {
    int trainable_task = 0;      // 0 = inference; otherwise that task's prompts
                                 // and heads are registered as parameters
    bool train_decoder = false;  // video decoder weights as parameters
    const FrameKv* kv = nullptr;
};

struct ForwardResult {
    Var p_frm;
    Var z_vid;  // flattened sequence after the GSS stack
    Var f_vid;  // concatenated rows feeding the heads
    std::vector<RouteOutput> routes;
    std::vector<ParamRef> params;
};

// Full pipeline on one video: frozen frame decoder -> video context decoder
// -> per-task heads, with routing over the concatenated prompt rows.
ForwardResult model_forward(Tape& t, Model& model, const InferenceBundle& bundle,
                            const FrameFeatures& feats, const ForwardOptions& opt);

// Ground-truth refs of one video against a task head's local class order.
std::vector<GtInstanceRef> gt_refs_for(const SyntheticVideo& video,
                                       const std::vector<int>& label_space);

}  // namespace hvpl
