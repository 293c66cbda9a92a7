#pragma once

#include <vector>

#include "specstreak/dists.hpp"

namespace specstreak::testutil {

// strictly positive random categorical; spread grows as `spread` rises
inline categorical random_cat(rng_state& rng, int size, double spread = 1.0) {
    std::vector<double> w(static_cast<size_t>(size));
    for (double& x : w) x = rng.gamma(spread <= 0.0 ? 1.0 : spread) + 1e-12;
    return categorical::normalized(std::move(w));
}

inline std::vector<double> random_logits(rng_state& rng, int size, double scale = 1.0) {
    std::vector<double> l(static_cast<size_t>(size));
    for (double& x : l) x = scale * rng.normal();
    return l;
}

}  // namespace specstreak::testutil
