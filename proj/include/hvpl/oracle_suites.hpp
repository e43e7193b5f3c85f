#pragma once

#include <string>
#include <vector>

namespace hvpl::oracles {

struct SuiteResult {
    std::string name;
    int checks = 0;
    int failures = 0;
    std::string detail;
    bool pass() const { return failures == 0 && checks > 0; }
};

// Runs every derived-value oracle suite: reference-implementation
// comparisons, closed-form fixtures and finite-difference gradient checks.
std::vector<SuiteResult> run_oracle_suites();

}  // namespace hvpl::oracles
