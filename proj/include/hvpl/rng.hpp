#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "hvpl/matrix.hpp"

namespace hvpl {

// Deterministic named-stream RNG. Every random quantity in a run is drawn
// from Rng(config.seed, label), so consumption order in one stream never
// perturbs another. Stream labels in use:
//
//   det/mix                       frozen prototype mixing matrix
//   det/L{l}/{wq,wk,wv,wo,m1,b1,m2,b2}   frozen frame-decoder layer weights
//   proto/c{gid}                  class prototype for global class id
//   proto/bg                      background prototype
//   vid/t{task}/{train|test}/{i}/geom    instance geometry for one video
//   vid/t{task}/{train|test}/{i}/noise   per-pixel feature noise
//   init/pfrm/t{t}, init/pvid/t{t}       prompt initialization
//   init/gc/t{t}, init/gm/t{t}           classifier / mask head init
//   init/gss{l}/{name}, init/msa{l}/{name}  video-decoder weight init
//   order/t{t}/e{e}               per-epoch training order shuffle
//   ogc/t{t}                      feature-space video sampling
//
// The generator is splitmix64; normals come from Box-Muller. Everything is
// bit-stable for a fixed (seed, label) pair.
class Rng {
public:
    Rng(uint64_t seed, std::string_view label);

    uint64_t next_u64();
    double uniform();                    // [0, 1)
    double normal();                     // standard normal
    int uniform_int(int lo, int hi);     // inclusive bounds
    void shuffle(std::vector<int>& v);   // Fisher-Yates

    Matrix normal_matrix(int rows, int cols, double sigma);

private:
    uint64_t state_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace hvpl
