#include "hvpl/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "hvpl/rng.hpp"

namespace fs = std::filesystem;

namespace hvpl {

Trainer::Trainer(TrainConfig cfg, std::string run_dir)
    : cfg_(std::move(cfg)),
      model_(cfg_),
      tasks_(generate_tasks(cfg_, model_.detector)),
      store_(std::move(run_dir)) {}

const Trainer::CachedVideo& Trainer::cached(int task_id, int index) {
    const long key = static_cast<long>(task_id) * 1000000 + index;
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    const VideoEntry& entry = tasks_.task(task_id).train[index];
    CachedVideo cv;
    cv.feats = model_.detector.render_features(entry.video, entry.spec);
    cv.kv = model_.detector.precompute_kv(cv.feats);
    return cache_.emplace(key, std::move(cv)).first->second;
}

void Trainer::train_task(int task_id, const TrainHooks* hooks) {
    if (task_id != trained_upto_ + 1)
        throw StateError("train_task: tasks must be trained in order; expected " +
                         std::to_string(trained_upto_ + 1));
    const Task& task = tasks_.task(task_id);
    const bool use_ogc = !cfg_.ablation.disable_ogc;

    store_.begin_task(task);

    if (task_id >= 2 && use_ogc) {
        if (!prev_space_) {
            // The space survives on disk between tasks; reload if needed.
            auto file = find_space_file(store_.dir());
            if (!file)
                throw StateError("train_task: missing feature space of task " +
                                 std::to_string(task_id - 1));
            prev_space_ = load_space(*file);
        }
        if (prev_space_->task_id != task_id - 1)
            throw StateError("train_task: stored feature space is for task " +
                             std::to_string(prev_space_->task_id));
    }

    // Fresh prompts and heads for this task.
    const double sigma = 1.0 / std::sqrt(static_cast<double>(cfg_.d_model));
    TaskParams params;
    params.task_id = task_id;
    params.label_space = task.label_space;
    params.p_frm = Rng(cfg_.seed, "init/pfrm/t" + std::to_string(task_id))
                       .normal_matrix(cfg_.lpf(task_id), cfg_.d_model, sigma);
    params.p_vid = Rng(cfg_.seed, "init/pvid/t" + std::to_string(task_id))
                       .normal_matrix(cfg_.lpv(task_id), cfg_.d_model, sigma);
    params.heads = TaskHeads::init(cfg_.d_model, static_cast<int>(task.label_space.size()),
                                   cfg_.seed, "init/heads/t" + std::to_string(task_id));
    model_.tasks.push_back(std::move(params));

    const bool train_decoder = (task_id == 1);
    const int n_videos = static_cast<int>(task.train.size());
    const std::string pfrm_name = "t" + std::to_string(task_id) + "/pfrm";

    OptimizerConfig opt_cfg;
    opt_cfg.lr = cfg_.learning_rate;

    long step = 0;
    for (int epoch = 0; epoch < cfg_.epochs_per_task; ++epoch) {
        std::vector<int> order(n_videos);
        for (int i = 0; i < n_videos; ++i) order[i] = i;
        Rng(cfg_.seed, "order/t" + std::to_string(task_id) + "/e" + std::to_string(epoch))
            .shuffle(order);

        double loss_sum = 0.0;
        for (int vi : order) {
            const CachedVideo& cv = cached(task_id, vi);
            Tape tape;
            ForwardOptions fopt;
            fopt.trainable_task = task_id;
            fopt.train_decoder = train_decoder;
            fopt.kv = &cv.kv;
            ForwardResult fwd =
                model_forward(tape, model_, model_.bundle_for_task(task_id), cv.feats, fopt);

            const RouteOutput& route = fwd.routes.front();
            PromptOutputs pred;
            pred.class_logits = route.class_logits;
            pred.mask_logits = route.mask_logits;
            pred.n_prompts = route.row_count;
            pred.n_frames = cfg_.n_frames;
            const std::vector<GtInstanceRef> gts =
                gt_refs_for(tasks_.task(task_id).train[vi].video, task.label_space);

            LossResult loss = set_prediction_loss(tape, pred, gts);
            loss_sum += tape.val(loss.total)(0, 0);
            tape.backward(loss.total);
            ++step;

            for (const ParamRef& ref : fwd.params) {
                const Matrix& grad = tape.grad(ref.var);
                ParamState& st = opt_states_[ref.name];
                if (ref.name == pfrm_name && task_id >= 2 && use_ogc) {
                    const Matrix delta_star = project_gradient(grad, *prev_space_);
                    ++projection_calls_;
                    if (hooks && hooks->on_projection)
                        hooks->on_projection(task_id, step, grad, delta_star, *prev_space_);
                    apply_projected_update(opt_cfg, *ref.target, delta_star, st, task_id);
                } else {
                    optimizer_apply(opt_cfg, *ref.target, grad, st);
                }
            }
        }
        if (hooks && hooks->on_epoch) hooks->on_epoch(task_id, epoch, loss_sum / n_videos);
    }

    trained_upto_ = task_id;

    if (use_ogc) {
        // Representative feature space of the task just finished; replaces
        // the previous task's space on disk.
        FeatureSpaceInputs in;
        in.detector = &model_.detector;
        in.frame_prompts = model_.task_params(task_id).p_frm;
        std::vector<const FrameFeatures*> feats;
        std::vector<std::vector<int>> classes;
        for (int vi = 0; vi < n_videos; ++vi) {
            feats.push_back(&cached(task_id, vi).feats);
            classes.push_back(task.train[vi].spec.instance_classes);
        }
        in.features = std::move(feats);
        in.video_classes = std::move(classes);
        in.task_classes = task.label_space;
        in.b_videos = cfg_.effective_b(static_cast<int>(task.label_space.size()));
        in.seed = cfg_.seed;
        in.task_id = task_id;
        in.xi = cfg_.xi;
        OrthoSpace space = build_feature_space(in);
        persist_space(space, store_.dir());
        prev_space_ = std::move(space);
    }

    store_.finish_task(task_id);
    cache_.clear();
}

const EvalReport& Trainer::evaluate_current() {
    EvalReport report = evaluate_model(model_, tasks_, trained_upto_);
    history_.push_back(std::move(report));
    return history_.back();
}

void Trainer::run_sequence(const TrainHooks* hooks) {
    for (int t = 1; t <= tasks_.count(); ++t) {
        train_task(t, hooks);
        evaluate_current();
    }
    write_metrics();
    save_state();
}

ForgettingReport Trainer::forgetting() const { return compute_fap(history_, tasks_); }

void Trainer::write_metrics() const {
    const nlohmann::json j = metrics_to_json(history_, forgetting(), projection_calls_);
    std::ofstream os(fs::path(store_.dir()) / "metrics.json", std::ios::trunc);
    os << j.dump(2) << "\n";
}

namespace {

void save_matrix(const fs::path& p, const Matrix& m) { write_matrix_file(p.string(), m); }

}  // namespace

void Trainer::save_state() const {
    const fs::path state = store_.state_dir();
    {
        std::ofstream os(fs::path(store_.dir()) / "config.json", std::ios::trunc);
        os << cfg_.to_json().dump(2) << "\n";
    }
    nlohmann::json meta;
    meta["trained_upto"] = trained_upto_;
    meta["projection_calls"] = projection_calls_;
    {
        std::ofstream os(state / "state.json", std::ios::trunc);
        os << meta.dump(2) << "\n";
    }
    // Video decoder weights, one file with records in a fixed order.
    {
        std::ofstream os(state / "vdec.hvpl", std::ios::binary | std::ios::trunc);
        for (const auto& g : model_.vdec.gss)
            for (const Matrix* m : g.all()) write_record(os, *m);
        for (const auto& ms : model_.vdec.msa)
            for (const Matrix* m : ms.all()) write_record(os, *m);
    }
    for (const TaskParams& t : model_.tasks) {
        const std::string stem = "t" + std::to_string(t.task_id);
        save_matrix(state / (stem + "_pfrm.hvpl"), t.p_frm);
        save_matrix(state / (stem + "_pvid.hvpl"), t.p_vid);
        std::ofstream os(state / (stem + "_heads.hvpl"), std::ios::binary | std::ios::trunc);
        for (const Matrix* m : t.heads.all()) write_record(os, *m);
    }
}

std::unique_ptr<Trainer> Trainer::load_state(const std::string& run_dir) {
    const fs::path root(run_dir);
    std::ifstream cfg_is(root / "config.json");
    if (!cfg_is) throw IoError("load_state: missing config.json under " + run_dir);
    nlohmann::json cj = nlohmann::json::parse(cfg_is, nullptr, false);
    if (cj.is_discarded()) throw IoError("load_state: corrupt config.json");
    TrainConfig cfg = TrainConfig::from_json(cj);
    cfg.validate();

    auto trainer = std::make_unique<Trainer>(cfg, run_dir);
    const fs::path state = trainer->store_.state_dir();
    std::ifstream meta_is(state / "state.json");
    if (!meta_is) throw IoError("load_state: missing state.json");
    nlohmann::json meta = nlohmann::json::parse(meta_is, nullptr, false);
    if (meta.is_discarded()) throw IoError("load_state: corrupt state.json");
    trainer->trained_upto_ = meta.at("trained_upto").get<int>();
    trainer->projection_calls_ = meta.at("projection_calls").get<long>();

    {
        std::ifstream is(state / "vdec.hvpl", std::ios::binary);
        if (!is) throw IoError("load_state: missing vdec.hvpl");
        for (auto& g : trainer->model_.vdec.gss)
            for (Matrix* m : g.all()) *m = read_record(is).as_matrix();
        for (auto& ms : trainer->model_.vdec.msa)
            for (Matrix* m : ms.all()) *m = read_record(is).as_matrix();
    }
    for (int t = 1; t <= trainer->trained_upto_; ++t) {
        const std::string stem = "t" + std::to_string(t);
        TaskParams params;
        params.task_id = t;
        params.label_space = trainer->tasks_.task(t).label_space;
        params.p_frm = read_matrix_file((state / (stem + "_pfrm.hvpl")).string());
        params.p_vid = read_matrix_file((state / (stem + "_pvid.hvpl")).string());
        std::ifstream is(state / (stem + "_heads.hvpl"), std::ios::binary);
        if (!is) throw IoError("load_state: missing heads for task " + std::to_string(t));
        params.heads = TaskHeads::init(cfg.d_model, static_cast<int>(params.label_space.size()),
                                       cfg.seed, "init/heads/t" + std::to_string(t));
        for (Matrix* m : params.heads.all()) *m = read_record(is).as_matrix();
        trainer->model_.tasks.push_back(std::move(params));
    }
    return trainer;
}

}  // namespace hvpl
