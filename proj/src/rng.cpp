#include "hvpl/rng.hpp"

#include <cmath>

namespace hvpl {

namespace {

uint64_t splitmix64(uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

}  // namespace

Rng::Rng(uint64_t seed, std::string_view label) {
    uint64_t s = seed;
    const uint64_t a = splitmix64(s);
    state_ = a ^ fnv1a64(label);
    // Burn a couple of outputs so nearby labels decorrelate fully.
    splitmix64(state_);
    splitmix64(state_);
}

uint64_t Rng::next_u64() { return splitmix64(state_); }

double Rng::uniform() {
    // 53 random mantissa bits -> [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller; u1 strictly positive.
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

int Rng::uniform_int(int lo, int hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
}

void Rng::shuffle(std::vector<int>& v) {
    for (size_t i = v.size(); i > 1; --i) {
        const size_t j = next_u64() % i;
        std::swap(v[i - 1], v[j]);
    }
}

Matrix Rng::normal_matrix(int rows, int cols, double sigma) {
    Matrix m(rows, cols);
    for (size_t i = 0; i < m.size(); ++i) m.data()[i] = normal() * sigma;
    return m;
}

}  // namespace hvpl
