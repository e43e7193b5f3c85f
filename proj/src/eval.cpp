#include "hvpl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "hvpl/parallel.hpp"

namespace hvpl {

double spatiotemporal_iou(const std::vector<std::vector<uint8_t>>& a,
                          const std::vector<std::vector<uint8_t>>& b) {
    check_shape(a.size() == b.size(), "spatiotemporal_iou: frame count mismatch");
    long inter = 0, uni = 0;
    for (size_t f = 0; f < a.size(); ++f) {
        check_shape(a[f].size() == b[f].size(), "spatiotemporal_iou: mask size mismatch");
        for (size_t p = 0; p < a[f].size(); ++p) {
            inter += (a[f][p] && b[f][p]) ? 1 : 0;
            uni += (a[f][p] || b[f][p]) ? 1 : 0;
        }
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<Prediction> predict_video(Model& model, const InferenceBundle& bundle,
                                      const FrameFeatures& feats, int video_index) {
    Tape t;
    ForwardOptions opt;
    ForwardResult fwd = model_forward(t, model, bundle, feats, opt);

    const int n_frames = model.cfg.n_frames;
    std::vector<Prediction> preds;
    for (const RouteOutput& route : fwd.routes) {
        const Matrix probs = softmax_rows(t.val(route.class_logits));
        const Matrix& ml = t.val(route.mask_logits);
        const int k = static_cast<int>(route.classes.size());
        for (int r = 0; r < route.row_count; ++r) {
            Prediction p;
            p.video_index = video_index;
            p.task_id = route.task_id;
            p.prompt_row = route.row_begin + r;
            int best = 0;
            for (int c = 1; c < k; ++c)
                if (probs(r, c) > probs(r, best)) best = c;
            p.class_id = route.classes[best];
            p.confidence = probs(r, best);
            p.masks.resize(n_frames);
            for (int f = 0; f < n_frames; ++f) {
                const double* z = ml.row(f * route.row_count + r);
                p.masks[f].resize(ml.cols());
                for (int j = 0; j < ml.cols(); ++j) p.masks[f][j] = z[j] > 0.0 ? 1 : 0;
            }
            preds.push_back(std::move(p));
        }
    }
    return preds;
}

namespace {

constexpr int kNumThresholds = 10;  // 0.50 : 0.05 : 0.95

double threshold(int i) { return 0.50 + 0.05 * i; }

struct GtSlot {
    int video_index;
    int class_id;
    const std::vector<std::vector<uint8_t>>* masks;
};

// Average precision from the all-point precision envelope.
double envelope_ap(const std::vector<char>& tp_flags, int total_gt) {
    if (total_gt == 0) return 0.0;
    std::vector<double> precision, recall;
    int tp = 0, fp = 0;
    for (char f : tp_flags) {
        if (f)
            ++tp;
        else
            ++fp;
        precision.push_back(static_cast<double>(tp) / (tp + fp));
        recall.push_back(static_cast<double>(tp) / total_gt);
    }
    double ap = 0.0, prev_recall = 0.0, max_prec = 0.0;
    // Monotone envelope from the right.
    std::vector<double> env(precision.size());
    for (int i = static_cast<int>(precision.size()) - 1; i >= 0; --i) {
        max_prec = std::max(max_prec, precision[i]);
        env[i] = max_prec;
    }
    for (size_t i = 0; i < recall.size(); ++i) {
        ap += (recall[i] - prev_recall) * env[i];
        prev_recall = recall[i];
    }
    return ap;
}

}  // namespace

EvalReport compute_metrics(const std::vector<Prediction>& preds,
                           const std::vector<const SyntheticVideo*>& videos) {
    EvalReport report;

    std::vector<GtSlot> gts;
    std::set<int> class_ids;
    for (size_t v = 0; v < videos.size(); ++v) {
        for (const auto& inst : videos[v]->instances) {
            gts.push_back({static_cast<int>(v), inst.class_id, &inst.masks});
            class_ids.insert(inst.class_id);
        }
    }

    // Stable prediction order: confidence desc, then (video, prompt row).
    std::vector<int> order(preds.size());
    for (size_t i = 0; i < preds.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (preds[a].confidence != preds[b].confidence)
            return preds[a].confidence > preds[b].confidence;
        if (preds[a].video_index != preds[b].video_index)
            return preds[a].video_index < preds[b].video_index;
        return preds[a].prompt_row < preds[b].prompt_row;
    });

    // Per-video top-1 prediction for AR1.
    std::map<int, int> top1;  // video -> pred index
    for (size_t i = 0; i < preds.size(); ++i) {
        auto it = top1.find(preds[i].video_index);
        if (it == top1.end()) {
            top1[preds[i].video_index] = static_cast<int>(i);
            continue;
        }
        const Prediction& cur = preds[it->second];
        if (preds[i].confidence > cur.confidence ||
            (preds[i].confidence == cur.confidence && preds[i].prompt_row < cur.prompt_row))
            it->second = static_cast<int>(i);
    }

    for (int cls : class_ids) {
        std::vector<int> cls_gt;
        for (size_t g = 0; g < gts.size(); ++g)
            if (gts[g].class_id == cls) cls_gt.push_back(static_cast<int>(g));
        const int total_gt = static_cast<int>(cls_gt.size());

        ClassMetrics cm;
        for (int ti = 0; ti < kNumThresholds; ++ti) {
            const double tau = threshold(ti);
            std::vector<char> matched(gts.size(), 0);
            std::vector<char> tp_flags;
            for (int pi : order) {
                const Prediction& p = preds[pi];
                if (p.class_id != cls) continue;
                int best_g = -1;
                double best_iou = 0.0;
                for (int g : cls_gt) {
                    if (matched[g] || gts[g].video_index != p.video_index) continue;
                    const double iou = spatiotemporal_iou(p.masks, *gts[g].masks);
                    if (iou > best_iou) {
                        best_iou = iou;
                        best_g = g;
                    }
                }
                if (best_g >= 0 && best_iou >= tau) {
                    matched[best_g] = 1;
                    tp_flags.push_back(1);
                } else {
                    tp_flags.push_back(0);
                }
            }
            const double ap = envelope_ap(tp_flags, total_gt);
            cm.ap += ap / kNumThresholds;
            if (ti == 0) cm.ap50 = ap;
            if (ti == 5) cm.ap75 = ap;

            // AR1: single highest-confidence prediction per video.
            std::vector<char> matched1(gts.size(), 0);
            int recalled = 0;
            for (const auto& [vid, pi] : top1) {
                (void)vid;
                const Prediction& p = preds[pi];
                if (p.class_id != cls) continue;
                int best_g = -1;
                double best_iou = 0.0;
                for (int g : cls_gt) {
                    if (matched1[g] || gts[g].video_index != p.video_index) continue;
                    const double iou = spatiotemporal_iou(p.masks, *gts[g].masks);
                    if (iou > best_iou) {
                        best_iou = iou;
                        best_g = g;
                    }
                }
                if (best_g >= 0 && best_iou >= tau) {
                    matched1[best_g] = 1;
                    ++recalled;
                }
            }
            cm.ar1 += (total_gt == 0 ? 0.0 : static_cast<double>(recalled) / total_gt) /
                      kNumThresholds;
        }
        report.per_class[cls] = cm;
    }

    if (!report.per_class.empty()) {
        for (const auto& [cls, cm] : report.per_class) {
            (void)cls;
            report.ap += cm.ap;
            report.ap50 += cm.ap50;
            report.ap75 += cm.ap75;
            report.ar1 += cm.ar1;
        }
        const double n = static_cast<double>(report.per_class.size());
        report.ap /= n;
        report.ap50 /= n;
        report.ap75 /= n;
        report.ar1 /= n;
    }
    return report;
}

EvalReport evaluate_model(Model& model, const TaskSequence& seq, int upto_task) {
    if (model.tasks.empty()) throw StateError("evaluate_model: no task has been trained yet");
    const InferenceBundle bundle = model.bundle(upto_task);

    std::vector<const VideoEntry*> entries;
    for (int t = 1; t <= upto_task; ++t)
        for (const auto& e : seq.task(t).test) entries.push_back(&e);

    std::vector<std::vector<Prediction>> slots(entries.size());
    parallel_for(static_cast<int>(entries.size()), [&](int i) {
        const FrameFeatures feats = model.detector.render_features(entries[i]->video,
                                                                   entries[i]->spec);
        slots[i] = predict_video(model, bundle, feats, i);
    });

    std::vector<Prediction> preds;
    std::vector<const SyntheticVideo*> videos;
    for (size_t i = 0; i < entries.size(); ++i) {
        videos.push_back(&entries[i]->video);
        preds.insert(preds.end(), slots[i].begin(), slots[i].end());
    }
    EvalReport report = compute_metrics(preds, videos);
    report.after_task = upto_task;
    return report;
}

ForgettingReport compute_fap(const std::vector<EvalReport>& history, const TaskSequence& seq) {
    ForgettingReport out;
    const int T = static_cast<int>(history.size());
    if (T <= 1) return out;

    const EvalReport& final_report = history.back();
    double fap_sum = 0.0, far_sum = 0.0;
    int fap_classes = 0, far_classes = 0;
    for (int t = 1; t <= T - 1; ++t) {
        const EvalReport& first = history[t - 1];
        const double task_weight = 1.0 / static_cast<double>(T - t);
        for (int cls : seq.task(t).label_space) {
            const auto fit = first.per_class.find(cls);
            const auto lit = final_report.per_class.find(cls);
            const double a_first = fit == first.per_class.end() ? 0.0 : fit->second.ap;
            const double a_final = lit == final_report.per_class.end() ? 0.0 : lit->second.ap;
            if (a_first > 0.0) {
                fap_sum += task_weight * (a_first - a_final) / a_first;
                ++fap_classes;
            } else {
                out.excluded_ap.push_back(cls);
            }
            const double r_first = fit == first.per_class.end() ? 0.0 : fit->second.ar1;
            const double r_final = lit == final_report.per_class.end() ? 0.0 : lit->second.ar1;
            if (r_first > 0.0) {
                far_sum += task_weight * (r_first - r_final) / r_first;
                ++far_classes;
            } else {
                out.excluded_ar1.push_back(cls);
            }
        }
    }
    if (fap_classes > 0) out.fap = fap_sum / fap_classes;
    if (far_classes > 0) out.far1 = far_sum / far_classes;
    return out;
}

nlohmann::json metrics_to_json(const std::vector<EvalReport>& history,
                               const ForgettingReport& forgetting, long projection_calls) {
    nlohmann::json j;
    nlohmann::json evals = nlohmann::json::array();
    for (const EvalReport& r : history) {
        nlohmann::json e;
        e["after_task"] = r.after_task;
        e["ap"] = r.ap;
        e["ap50"] = r.ap50;
        e["ap75"] = r.ap75;
        e["ar1"] = r.ar1;
        nlohmann::json pc;
        for (const auto& [cls, cm] : r.per_class) {
            pc[std::to_string(cls)] = {
                {"ap", cm.ap}, {"ap50", cm.ap50}, {"ap75", cm.ap75}, {"ar1", cm.ar1}};
        }
        e["per_class"] = pc;
        evals.push_back(e);
    }
    j["evaluations"] = evals;
    if (forgetting.fap)
        j["fap"] = *forgetting.fap;
    else
        j["fap"] = nullptr;
    if (forgetting.far1)
        j["far1"] = *forgetting.far1;
    else
        j["far1"] = nullptr;
    j["fap_excluded_classes"] = forgetting.excluded_ap;
    j["far1_excluded_classes"] = forgetting.excluded_ar1;
    j["projection_calls"] = projection_calls;
    return j;
}

std::vector<int> rle_encode(const std::vector<uint8_t>& mask) {
    std::vector<int> runs;
    uint8_t cur = 0;
    int len = 0;
    for (uint8_t b : mask) {
        const uint8_t bit = b ? 1 : 0;
        if (bit == cur) {
            ++len;
        } else {
            runs.push_back(len);
            cur = bit;
            len = 1;
        }
    }
    runs.push_back(len);
    return runs;
}

nlohmann::json prediction_to_json(const Prediction& p) {
    nlohmann::json j;
    j["video"] = p.video_index;
    j["task"] = p.task_id;
    j["prompt"] = p.prompt_row;
    j["class"] = p.class_id;
    j["confidence"] = p.confidence;
    nlohmann::json masks = nlohmann::json::array();
    for (const auto& m : p.masks) masks.push_back(rle_encode(m));
    j["masks_rle"] = masks;
    return j;
}

}  // namespace hvpl
