#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "hvpl/config.hpp"

namespace hvpl {

struct AblationRun {
    std::string variant;
    uint64_t seed = 0;
    bool fap_defined = false;
    double fap = 0.0;
    double ap = 0.0;
    double ar1 = 0.0;
};

struct AblationReport {
    std::vector<AblationRun> runs;
    int seeds = 0;
    int wins = 0;  // seeds where FAP(full) < FAP(no_ogc)
    bool ordering_holds = false;
    nlohmann::json to_json() const;
};

// Runs the full pipeline and the disable_ogc variant on the same task
// sequences across cfg.ablation_seeds, side by side. The directional claim
// holds when FAP(full) < FAP(no_ogc) on at least 4 of 5 seeds (pro-rated for
// other seed counts). Run directories land under out_dir.
AblationReport run_ablation(const TrainConfig& base, const std::string& out_dir);

}  // namespace hvpl
