#pragma once

#include <string>
#include <vector>

#include "hvpl/matrix.hpp"
#include "hvpl/ssm.hpp"
#include "hvpl/tape.hpp"

namespace hvpl {

// One cross-attention block of the video context decoder: the queries are
// always the task video prompt, keys/values are the previous layer's output;
// out = msa + mlp(msa) with msa = p_vid + concat(heads) wo.
struct MsaWeights {
    Matrix wq, wk, wv, wo;  // D x D, heads packed along columns
    Matrix mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    static MsaWeights init(int d, uint64_t seed, const std::string& label);
    std::vector<Matrix*> all();
    std::vector<const Matrix*> all() const;
};

struct MsaVars {
    Var wq, wk, wv, wo, mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};
MsaVars push_msa(Tape& t, const MsaWeights& w, bool trainable);

Var msa_layer(Tape& t, Var p_vid, Var f_prev, const MsaVars& w, int n_heads, bool layer_norm);

// Video context decoder weights: trainable during the first task only.
struct VideoDecoderWeights {
    std::vector<GssWeights> gss;
    std::vector<MsaWeights> msa;
    static VideoDecoderWeights init(int d, int q, int gss_layers, int msa_layers, uint64_t seed);
};

struct VideoDecoderVars {
    std::vector<GssVars> gss;
    std::vector<MsaVars> msa;
};
VideoDecoderVars push_video_decoder(Tape& t, const VideoDecoderWeights& w, bool trainable);

// z_frm_flat is the frame-major (N_f * L_p^f) x D reshaping of the decoded
// frame prompt features; p_vid the (possibly concatenated) video prompts.
struct DecodeVideoOptions {
    int n_heads = 4;
    int knn_phi = 4;
    bool disable_gtssm = false;
    bool gss_residual = false;
    bool msa_layernorm = false;
};
struct DecodeVideoOut {
    Var z_vid;   // after the GSS stack
    Var f_vid;   // after the MSA stack (rows of p_vid)
};
DecodeVideoOut decode_video(Tape& t, Var z_frm_flat, Var p_vid, const VideoDecoderVars& w,
                            const DecodeVideoOptions& opt);

// --- task heads ---------------------------------------------------------------

struct TaskHeads {
    Matrix gamma_c;                      // D x (K+1): task classes plus no-object
    Matrix gm_w1, gm_b1, gm_w2, gm_b2;   // two-layer mask MLP D -> D
    static TaskHeads init(int d, int n_classes, uint64_t seed, const std::string& label);
    int n_classes() const { return gamma_c.cols() - 1; }
    std::vector<Matrix*> all();
    std::vector<const Matrix*> all() const;
};

struct TaskHeadVars {
    Var gamma_c, gm_w1, gm_b1, gm_w2, gm_b2;
};
TaskHeadVars push_heads(Tape& t, const TaskHeads& h, bool trainable);

// Row-wise class probabilities over (K+1) entries.
Var classify(Tape& t, Var f_vid_rows, Var gamma_c);
// Mask embeddings through the two-layer MLP.
Var mask_embeddings(Tape& t, Var f_vid_rows, const TaskHeadVars& h);
// Mask logits against per-frame pixel embeddings; rows are frame-major
// (frame f, prompt p) -> row f * n_prompts + p.
Var mask_logits(Tape& t, Var embeddings, const std::vector<Matrix>& f_out);

// --- prompt bank & inference concatenation -----------------------------------

struct PromptBank {
    std::vector<int> task_ids;          // 1-based, unique, ascending
    std::vector<Matrix> frame_prompts;  // per task, L_p^f(t) x D
    std::vector<Matrix> video_prompts;  // per task, L_p^v(t) x D
};

struct RouteSlice {
    int task_id = 0;
    int row_begin = 0;              // into the concatenated video-prompt rows
    int row_count = 0;
    std::vector<int> classes;       // global class ids, classifier column order
    const TaskHeads* heads = nullptr;
};

struct InferenceBundle {
    Matrix p_frm_star;
    Matrix p_vid_star;
    std::vector<RouteSlice> routes;
};

// Concatenates all prompts of tasks 1..upto_task and builds the routing table
// mapping each task's video-prompt rows to its heads and global class ids.
// Throws StateError when a task's prompts are missing.
InferenceBundle concat_for_inference(const PromptBank& bank,
                                     const std::vector<const TaskHeads*>& heads,
                                     const std::vector<std::vector<int>>& label_spaces,
                                     int upto_task);

}  // namespace hvpl
