#include "hvpl/pipeline.hpp"

#include <algorithm>

namespace hvpl {

Model::Model(TrainConfig config)
    : cfg(std::move(config)),
      detector(cfg.detector_config(), cfg.seed),
      vdec(VideoDecoderWeights::init(cfg.d_model, cfg.q_state, cfg.gss_layers, cfg.msa_layers,
                                     cfg.seed)) {
    cfg.validate();
}

TaskParams& Model::task_params(int task_id) {
    for (auto& t : tasks)
        if (t.task_id == task_id) return t;
    throw StateError("model: task " + std::to_string(task_id) + " has no parameters yet");
}

const TaskParams& Model::task_params(int task_id) const {
    for (const auto& t : tasks)
        if (t.task_id == task_id) return t;
    throw StateError("model: task " + std::to_string(task_id) + " has no parameters yet");
}

bool Model::has_task(int task_id) const {
    for (const auto& t : tasks)
        if (t.task_id == task_id) return true;
    return false;
}

InferenceBundle Model::bundle(int upto_task) const {
    PromptBank bank;
    std::vector<const TaskHeads*> heads;
    std::vector<std::vector<int>> labels;
    for (const auto& t : tasks) {
        if (t.task_id > upto_task) continue;
        bank.task_ids.push_back(t.task_id);
        bank.frame_prompts.push_back(t.p_frm);
        bank.video_prompts.push_back(t.p_vid);
        heads.push_back(&t.heads);
        labels.push_back(t.label_space);
    }
    return concat_for_inference(bank, heads, labels, upto_task);
}

InferenceBundle Model::bundle_for_task(int task_id) const {
    const TaskParams& t = task_params(task_id);
    InferenceBundle b;
    b.p_frm_star = t.p_frm;
    b.p_vid_star = t.p_vid;
    RouteSlice slice;
    slice.task_id = task_id;
    slice.row_begin = 0;
    slice.row_count = t.p_vid.rows();
    slice.classes = t.label_space;
    slice.heads = &t.heads;
    b.routes.push_back(std::move(slice));
    return b;
}

namespace {

// Mean over the frame copies of each prompt position: rows = prompt
// positions, cols = flattened sequence positions.
Matrix frame_pool_matrix(int n_frames, int positions) {
    Matrix pool(positions, n_frames * positions);
    const double w = 1.0 / n_frames;
    for (int p = 0; p < positions; ++p)
        for (int f = 0; f < n_frames; ++f) pool(p, f * positions + p) = w;
    return pool;
}

}  // namespace

ForwardResult model_forward(Tape& t, Model& model, const InferenceBundle& bundle,
                            const FrameFeatures& feats, const ForwardOptions& opt) {
    const TrainConfig& cfg = model.cfg;
    ForwardResult out;

    const bool train_prompts = opt.trainable_task > 0;
    TaskParams* trainable = train_prompts ? &model.task_params(opt.trainable_task) : nullptr;
    if (train_prompts)
        check_shape(bundle.routes.size() == 1 && bundle.routes[0].task_id == opt.trainable_task,
                    "model_forward: training expects the single-task bundle");

    // Frame prompts through the frozen frame decoder.
    out.p_frm = train_prompts ? t.param(bundle.p_frm_star) : t.constant(bundle.p_frm_star);
    if (train_prompts)
        out.params.push_back({"t" + std::to_string(opt.trainable_task) + "/pfrm", out.p_frm,
                              &trainable->p_frm});
    std::vector<Var> z_frames = model.detector.transformer_decode(t, out.p_frm, feats, opt.kv);
    Var z_flat = t.concat_rows(z_frames);

    // Video decoder weights.
    VideoDecoderVars vdec_vars = push_video_decoder(t, model.vdec, opt.train_decoder);
    if (opt.train_decoder) {
        for (size_t l = 0; l < vdec_vars.gss.size(); ++l) {
            auto vars = vdec_vars.gss[l].list();
            auto mats = model.vdec.gss[l].all();
            for (size_t k = 0; k < vars.size(); ++k)
                out.params.push_back(
                    {"gss" + std::to_string(l) + "/w" + std::to_string(k), vars[k], mats[k]});
        }
        for (size_t l = 0; l < vdec_vars.msa.size(); ++l) {
            const std::vector<Var> vars = {vdec_vars.msa[l].wq,     vdec_vars.msa[l].wk,
                                           vdec_vars.msa[l].wv,     vdec_vars.msa[l].wo,
                                           vdec_vars.msa[l].mlp_w1, vdec_vars.msa[l].mlp_b1,
                                           vdec_vars.msa[l].mlp_w2, vdec_vars.msa[l].mlp_b2};
            auto mats = model.vdec.msa[l].all();
            for (size_t k = 0; k < vars.size(); ++k)
                out.params.push_back(
                    {"msa" + std::to_string(l) + "/w" + std::to_string(k), vars[k], mats[k]});
        }
    }

    // GSS stack.
    Var z_vid = z_flat;
    if (!cfg.ablation.disable_gtssm)
        for (const auto& layer : vdec_vars.gss)
            z_vid = gss_layer(t, z_vid, layer, cfg.knn_phi, cfg.ablation.gss_residual).z_next;
    out.z_vid = z_vid;

    // Video prompts + MSA stack, or per-position frame pooling when the
    // video-prompt path is ablated away.
    std::vector<int> route_rows;  // row counts per route in f_vid
    if (cfg.ablation.disable_video_prompt) {
        const int positions = bundle.p_frm_star.rows();
        Var pool = t.constant(frame_pool_matrix(cfg.n_frames, positions));
        out.f_vid = t.matmul(pool, z_vid);
        for (const auto& r : bundle.routes) {
            int frm_rows = 0;
            for (const auto& task : model.tasks)
                if (task.task_id == r.task_id) frm_rows = task.p_frm.rows();
            route_rows.push_back(frm_rows);
        }
    } else {
        Var p_vid = train_prompts ? t.param(bundle.p_vid_star) : t.constant(bundle.p_vid_star);
        if (train_prompts)
            out.params.push_back({"t" + std::to_string(opt.trainable_task) + "/pvid", p_vid,
                                  &trainable->p_vid});
        Var f = p_vid;
        for (size_t l = 0; l < vdec_vars.msa.size(); ++l) {
            Var kv = (l == 0) ? z_vid : f;
            f = msa_layer(t, p_vid, kv, vdec_vars.msa[l], cfg.n_heads, cfg.ablation.msa_layernorm);
        }
        out.f_vid = f;
        for (const auto& r : bundle.routes) route_rows.push_back(r.row_count);
    }

    // Per-task heads over their row slice.
    int row = 0;
    for (size_t ri = 0; ri < bundle.routes.size(); ++ri) {
        const RouteSlice& slice = bundle.routes[ri];
        const bool head_trainable = train_prompts && slice.task_id == opt.trainable_task;
        TaskHeadVars hv = push_heads(t, *slice.heads, head_trainable);
        if (head_trainable) {
            const std::string base = "t" + std::to_string(slice.task_id) + "/head/";
            const std::vector<Var> vars = {hv.gamma_c, hv.gm_w1, hv.gm_b1, hv.gm_w2, hv.gm_b2};
            auto mats = trainable->heads.all();
            for (size_t k = 0; k < vars.size(); ++k)
                out.params.push_back({base + "w" + std::to_string(k), vars[k], mats[k]});
        }

        RouteOutput ro;
        ro.task_id = slice.task_id;
        ro.classes = slice.classes;
        ro.row_begin = row;
        ro.row_count = route_rows[ri];
        Var rows_slice = t.slice_rows(out.f_vid, row, row + ro.row_count);
        ro.class_logits = t.matmul(rows_slice, hv.gamma_c);
        Var emb = mask_embeddings(t, rows_slice, hv);
        ro.mask_logits = mask_logits(t, emb, feats.f_out);
        row += ro.row_count;
        out.routes.push_back(std::move(ro));
    }
    return out;
}

std::vector<GtInstanceRef> gt_refs_for(const SyntheticVideo& video,
                                       const std::vector<int>& label_space) {
    std::vector<GtInstanceRef> refs;
    for (const auto& inst : video.instances) {
        auto it = std::find(label_space.begin(), label_space.end(), inst.class_id);
        check_shape(it != label_space.end(), "gt_refs_for: class not in label space");
        GtInstanceRef r;
        r.local_class = static_cast<int>(it - label_space.begin());
        auto flat = std::make_shared<std::vector<uint8_t>>();
        for (const auto& m : inst.masks) flat->insert(flat->end(), m.begin(), m.end());
        r.mask = flat;
        refs.push_back(std::move(r));
    }
    return refs;
}

}  // namespace hvpl
