#include "hvpl/video_decoder.hpp"

#include <cmath>

#include "hvpl/rng.hpp"

namespace hvpl {

MsaWeights MsaWeights::init(int d, uint64_t seed, const std::string& label) {
    const double sigma = 1.0 / std::sqrt(static_cast<double>(d));
    Rng rng(seed, label);
    MsaWeights w;
    w.wq = rng.normal_matrix(d, d, sigma);
    w.wk = rng.normal_matrix(d, d, sigma);
    w.wv = rng.normal_matrix(d, d, sigma);
    w.wo = rng.normal_matrix(d, d, sigma);
    w.mlp_w1 = rng.normal_matrix(d, d, sigma);
    w.mlp_b1 = Matrix(1, d);
    w.mlp_w2 = rng.normal_matrix(d, d, sigma);
    w.mlp_b2 = Matrix(1, d);
    return w;
}

std::vector<Matrix*> MsaWeights::all() {
    return {&wq, &wk, &wv, &wo, &mlp_w1, &mlp_b1, &mlp_w2, &mlp_b2};
}
std::vector<const Matrix*> MsaWeights::all() const {
    return {&wq, &wk, &wv, &wo, &mlp_w1, &mlp_b1, &mlp_w2, &mlp_b2};
}

MsaVars push_msa(Tape& t, const MsaWeights& w, bool trainable) {
    auto put = [&](const Matrix& m) { return trainable ? t.param(m) : t.constant(m); };
    MsaVars v;
    v.wq = put(w.wq);
    v.wk = put(w.wk);
    v.wv = put(w.wv);
    v.wo = put(w.wo);
    v.mlp_w1 = put(w.mlp_w1);
    v.mlp_b1 = put(w.mlp_b1);
    v.mlp_w2 = put(w.mlp_w2);
    v.mlp_b2 = put(w.mlp_b2);
    return v;
}

Var msa_layer(Tape& t, Var p_vid, Var f_prev, const MsaVars& w, int n_heads, bool layer_norm) {
    const int d = t.val(p_vid).cols();
    check_shape(t.val(f_prev).cols() == d, "msa_layer: width mismatch");
    check_shape(d % n_heads == 0, "msa_layer: heads must divide d");
    const int dh = d / n_heads;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));

    Var q = t.matmul(p_vid, w.wq);
    Var k = t.matmul(f_prev, w.wk);
    Var v = t.matmul(f_prev, w.wv);
    std::vector<Var> heads;
    for (int h = 0; h < n_heads; ++h) {
        Var qh = t.slice_cols(q, h * dh, (h + 1) * dh);
        Var kh = t.slice_cols(k, h * dh, (h + 1) * dh);
        Var vh = t.slice_cols(v, h * dh, (h + 1) * dh);
        Var scores = t.softmax_rows(t.scale(t.matmul_nt(qh, kh), inv));
        heads.push_back(t.matmul(scores, vh));
    }
    Var msa = t.add(p_vid, t.matmul(t.concat_cols(heads), w.wo));
    if (layer_norm) msa = t.layer_norm_rows(msa);
    Var hmid = t.silu(t.add_row(t.matmul(msa, w.mlp_w1), w.mlp_b1));
    Var mlp = t.add_row(t.matmul(hmid, w.mlp_w2), w.mlp_b2);
    return t.add(msa, mlp);
}

VideoDecoderWeights VideoDecoderWeights::init(int d, int q, int gss_layers, int msa_layers,
                                              uint64_t seed) {
    VideoDecoderWeights w;
    for (int l = 0; l < gss_layers; ++l)
        w.gss.push_back(GssWeights::init(d, q, seed, "init/gss" + std::to_string(l)));
    for (int l = 0; l < msa_layers; ++l)
        w.msa.push_back(MsaWeights::init(d, seed, "init/msa" + std::to_string(l)));
    return w;
}

VideoDecoderVars push_video_decoder(Tape& t, const VideoDecoderWeights& w, bool trainable) {
    VideoDecoderVars v;
    for (const auto& g : w.gss) v.gss.push_back(push_gss(t, g, trainable));
    for (const auto& m : w.msa) v.msa.push_back(push_msa(t, m, trainable));
    return v;
}

DecodeVideoOut decode_video(Tape& t, Var z_frm_flat, Var p_vid, const VideoDecoderVars& w,
                            const DecodeVideoOptions& opt) {
    Var z = z_frm_flat;
    if (!opt.disable_gtssm)
        for (const auto& layer : w.gss)
            z = gss_layer(t, z, layer, opt.knn_phi, opt.gss_residual).z_next;
    // Queries are always the video prompt; keys/values start at the GSS
    // output and then track the previous layer's output. Zero MSA layers
    // pass the prompt through unchanged.
    Var f = p_vid;
    for (size_t l = 0; l < w.msa.size(); ++l) {
        Var kv = (l == 0) ? z : f;
        f = msa_layer(t, p_vid, kv, w.msa[l], opt.n_heads, opt.msa_layernorm);
    }
    return {z, f};
}

TaskHeads TaskHeads::init(int d, int n_classes, uint64_t seed, const std::string& label) {
    const double sigma = 1.0 / std::sqrt(static_cast<double>(d));
    Rng rng(seed, label);
    TaskHeads h;
    h.gamma_c = rng.normal_matrix(d, n_classes + 1, sigma);
    h.gm_w1 = rng.normal_matrix(d, d, sigma);
    h.gm_b1 = Matrix(1, d);
    h.gm_w2 = rng.normal_matrix(d, d, sigma);
    h.gm_b2 = Matrix(1, d);
    return h;
}

std::vector<Matrix*> TaskHeads::all() { return {&gamma_c, &gm_w1, &gm_b1, &gm_w2, &gm_b2}; }
std::vector<const Matrix*> TaskHeads::all() const {
    return {&gamma_c, &gm_w1, &gm_b1, &gm_w2, &gm_b2};
}

TaskHeadVars push_heads(Tape& t, const TaskHeads& h, bool trainable) {
    auto put = [&](const Matrix& m) { return trainable ? t.param(m) : t.constant(m); };
    TaskHeadVars v;
    v.gamma_c = put(h.gamma_c);
    v.gm_w1 = put(h.gm_w1);
    v.gm_b1 = put(h.gm_b1);
    v.gm_w2 = put(h.gm_w2);
    v.gm_b2 = put(h.gm_b2);
    return v;
}

Var classify(Tape& t, Var f_vid_rows, Var gamma_c) {
    return t.softmax_rows(t.matmul(f_vid_rows, gamma_c));
}

Var mask_embeddings(Tape& t, Var f_vid_rows, const TaskHeadVars& h) {
    Var mid = t.silu(t.add_row(t.matmul(f_vid_rows, h.gm_w1), h.gm_b1));
    return t.add_row(t.matmul(mid, h.gm_w2), h.gm_b2);
}

Var mask_logits(Tape& t, Var embeddings, const std::vector<Matrix>& f_out) {
    std::vector<Var> frames;
    for (const Matrix& f : f_out) frames.push_back(t.matmul_nt(embeddings, t.constant(f)));
    return t.concat_rows(frames);
}

InferenceBundle concat_for_inference(const PromptBank& bank,
                                     const std::vector<const TaskHeads*>& heads,
                                     const std::vector<std::vector<int>>& label_spaces,
                                     int upto_task) {
    InferenceBundle out;
    std::vector<Matrix> frm, vid;
    int row = 0;
    for (int task = 1; task <= upto_task; ++task) {
        int idx = -1;
        for (size_t i = 0; i < bank.task_ids.size(); ++i)
            if (bank.task_ids[i] == task) idx = static_cast<int>(i);
        if (idx < 0 || idx >= static_cast<int>(heads.size()) || heads[idx] == nullptr)
            throw StateError("concat_for_inference: missing prompts or heads for task " +
                             std::to_string(task));
        frm.push_back(bank.frame_prompts[idx]);
        vid.push_back(bank.video_prompts[idx]);
        RouteSlice slice;
        slice.task_id = task;
        slice.row_begin = row;
        slice.row_count = bank.video_prompts[idx].rows();
        slice.classes = label_spaces[idx];
        slice.heads = heads[idx];
        row += slice.row_count;
        out.routes.push_back(std::move(slice));
    }
    out.p_frm_star = concat_rows(frm);
    out.p_vid_star = concat_rows(vid);
    return out;
}

}  // namespace hvpl
