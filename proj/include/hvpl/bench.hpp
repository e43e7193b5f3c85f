#pragma once

#include <string>
#include <vector>

namespace hvpl {

struct BenchRow {
    int n_v = 0;
    double fast_ns = 0.0;
    double brute_ns = 0.0;
};

// Times the two hidden-state routines over random trees/parameters at the
// requested sequence lengths. Each measurement repeats until it accumulates
// enough wall time to be stable.
std::vector<BenchRow> bench_traversal(const std::vector<int>& sizes, uint64_t seed = 42);

void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows);

// Least-squares slope of log(time) against log(n) over the rows whose n_v is
// in `sizes`; column selected by `fast`.
double fitted_slope(const std::vector<BenchRow>& rows, const std::vector<int>& sizes, bool fast);

}  // namespace hvpl
