#include "hvpl/ablate.hpp"

#include <filesystem>

#include "hvpl/parallel.hpp"
#include "hvpl/train.hpp"

namespace fs = std::filesystem;

namespace hvpl {

nlohmann::json AblationReport::to_json() const {
    nlohmann::json j;
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : runs) {
        nlohmann::json e;
        e["variant"] = r.variant;
        e["seed"] = r.seed;
        if (r.fap_defined)
            e["fap"] = r.fap;
        else
            e["fap"] = nullptr;
        e["ap"] = r.ap;
        e["ar1"] = r.ar1;
        rs.push_back(e);
    }
    j["runs"] = rs;
    j["seeds"] = seeds;
    j["wins"] = wins;
    j["ordering_holds"] = ordering_holds;
    return j;
}

AblationReport run_ablation(const TrainConfig& base, const std::string& out_dir) {
    base.validate();
    const std::vector<std::string> variants = {"full", "no_ogc"};
    const int n_seeds = static_cast<int>(base.ablation_seeds.size());
    const int total = n_seeds * static_cast<int>(variants.size());

    AblationReport report;
    report.seeds = n_seeds;
    report.runs.resize(total);

    parallel_for(total, [&](int idx) {
        const int si = idx / 2;
        const int vi = idx % 2;
        TrainConfig cfg = base;
        cfg.seed = base.ablation_seeds[si];
        cfg.ablation.disable_ogc = (variants[vi] == "no_ogc");
        const std::string run_dir =
            (fs::path(out_dir) / (variants[vi] + "_s" + std::to_string(cfg.seed))).string();
        Trainer trainer(cfg, run_dir);
        trainer.run_sequence();

        AblationRun run;
        run.variant = variants[vi];
        run.seed = cfg.seed;
        const ForgettingReport f = trainer.forgetting();
        run.fap_defined = f.fap.has_value();
        run.fap = f.fap.value_or(0.0);
        run.ap = trainer.history().back().ap;
        run.ar1 = trainer.history().back().ar1;
        report.runs[idx] = std::move(run);
    });

    for (int si = 0; si < n_seeds; ++si) {
        const AblationRun& full = report.runs[si * 2];
        const AblationRun& ablated = report.runs[si * 2 + 1];
        if (full.fap_defined && ablated.fap_defined && full.fap < ablated.fap) ++report.wins;
    }
    report.ordering_holds = report.wins * 5 >= 4 * n_seeds;
    return report;
}

}  // namespace hvpl
