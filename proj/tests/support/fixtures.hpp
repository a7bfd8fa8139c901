#pragma once

// Small synthetic datasets shared by the training and compression tests.

#include <vector>

#include "cftwin/cfgen.hpp"
#include "cftwin/training.hpp"

namespace fixture {

// Maps from the channel simulator with the BS moved around a small area.
inline std::vector<cftwin::cfgen::CFPair> simulated_pairs(int count, int res, int factor, std::uint64_t seed) {
    std::vector<cftwin::cfgen::CFPair> pairs;
    cftwin::Rng rng(seed);
    for (int k = 0; k < count; ++k) {
        cftwin::cfgen::Scenario s;
        s.area_side_m = 4.0 * res;
        s.n_subcarriers_active = 16;
        s.n_subcarriers_total = 32;
        s.n_ant_h = s.n_ant_v = 2;
        s.bs_location = {static_cast<double>(rng.uniform_int(0, static_cast<int>(s.area_side_m))),
                         static_cast<double>(rng.uniform_int(0, static_cast<int>(s.area_side_m)))};
        s.seed = seed * 1000 + k;
        const auto hr = cftwin::cfgen::minmax_normalize(cftwin::cfgen::rasterize_cf(s, res));
        pairs.push_back({hr, cftwin::cfgen::downsample_cf(hr, factor)});
    }
    return pairs;
}

inline cftwin::training::TrainingSet simulated_set(int count, int res, int factor, std::uint64_t seed) {
    const auto pairs = simulated_pairs(count, res, factor, seed);
    return cftwin::training::make_training_set(pairs);
}

}  // namespace fixture
