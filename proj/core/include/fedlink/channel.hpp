#pragma once

#include <optional>
#include <vector>

#include "fedlink/datastore.hpp"

namespace fedlink {

/// Path-loss channel synthesis: the RSS matrix W is generated from client
/// geometry so link qualities are heterogeneous and reproducible.
struct ChannelParams {
    double rate = 1.0;           // bits per channel use
    double noise_power = 1.0;    // sigma^2
    double tx_power = 1.0;
    double pathloss_exponent = 2.0;
    double side = 1.0;                                        // uniform-square placement
    std::optional<std::vector<std::pair<double, double>>> positions;  // explicit placement
    uint64_t seed = 0;
};

struct RssMatrix {
    Matrix w;  // N x N, symmetric off-diagonal, diagonal = +inf sentinel (unused)
    std::vector<std::pair<double, double>> positions;
};

RssMatrix generate_rss(const ChannelParams& params, int n_clients);

/// P_D(i,j) = 1 - exp(-(2^r - 1) * sigma^2 / W_ij). Diagonal set to 0 by
/// convention; self links are masked upstream.
Matrix failure_probability(const RssMatrix& rss, double rate, double noise_power);

}  // namespace fedlink
