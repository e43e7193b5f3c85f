#include "hvpl/bench.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "hvpl/rng.hpp"
#include "hvpl/ssm.hpp"
#include "hvpl/tree.hpp"

namespace hvpl {

namespace {

using Clock = std::chrono::steady_clock;

constexpr int kStateDim = 16;
constexpr int kFeatDim = 8;  // small so the quadratic term dominates the brute path

struct BenchCase {
    Matrix x;
    ExplicitSsm params;
    SpanningTree tree;
};

BenchCase make_case(int n, uint64_t seed) {
    Rng rng(seed, "bench/n" + std::to_string(n));
    BenchCase bc;
    bc.x = rng.normal_matrix(n, kFeatDim, 1.0);
    for (int i = 0; i < kStateDim; ++i) bc.params.a.push_back(-std::exp(rng.normal() * 0.3));
    for (int j = 0; j < n; ++j) {
        bc.params.delta.push_back(0.05 + std::fabs(rng.normal()));
        bc.params.b.push_back(rng.normal_matrix(kStateDim, kFeatDim, 1.0));
    }
    std::vector<int> parent(n);
    parent[0] = 0;
    for (int v = 1; v < n; ++v) parent[v] = rng.uniform_int(0, v - 1);
    bc.tree = tree_from_parents(parent, 0);
    return bc;
}

template <typename F>
double time_ns(F&& fn, double min_total_ms) {
    // Warm-up run, then repeat until the accumulated time is stable.
    fn();
    int reps = 0;
    const auto start = Clock::now();
    double elapsed_ms = 0.0;
    do {
        fn();
        ++reps;
        elapsed_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    } while (elapsed_ms < min_total_ms);
    return elapsed_ms * 1e6 / reps;
}

}  // namespace

std::vector<BenchRow> bench_traversal(const std::vector<int>& sizes, uint64_t seed) {
    std::vector<BenchRow> rows;
    for (int n : sizes) {
        BenchCase bc = make_case(n, seed);
        BenchRow row;
        row.n_v = n;
        volatile double sink = 0.0;
        row.fast_ns = time_ns(
            [&] {
                Matrix h = gt_ssm_fast(bc.x, bc.params, bc.tree);
                sink = sink + h(0, 0);
            },
            120.0);
        row.brute_ns = time_ns(
            [&] {
                Matrix h = gt_ssm_bruteforce(bc.x, bc.params, bc.tree);
                sink = sink + h(0, 0);
            },
            120.0);
        rows.push_back(row);
    }
    return rows;
}

void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows) {
    std::ofstream os(path, std::ios::trunc);
    os << "n_v,fast_ns,brute_ns\n";
    for (const auto& r : rows)
        os << r.n_v << "," << static_cast<long long>(r.fast_ns) << ","
           << static_cast<long long>(r.brute_ns) << "\n";
}

double fitted_slope(const std::vector<BenchRow>& rows, const std::vector<int>& sizes, bool fast) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (const auto& r : rows) {
        bool wanted = false;
        for (int s : sizes) wanted = wanted || (s == r.n_v);
        if (!wanted) continue;
        const double x = std::log(static_cast<double>(r.n_v));
        const double y = std::log(fast ? r.fast_ns : r.brute_ns);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++n;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace hvpl
