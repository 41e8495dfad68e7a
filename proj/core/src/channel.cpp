#include "fedlink/channel.hpp"

#include <cmath>
#include <limits>

namespace fedlink {

RssMatrix generate_rss(const ChannelParams& params, int n_clients) {
    if (n_clients < 2) throw argument_error("generate_rss: need at least 2 clients");
    if (params.rate <= 0.0) throw argument_error("generate_rss: rate must be positive");
    if (params.noise_power <= 0.0) throw argument_error("generate_rss: noise power must be positive");
    if (params.tx_power <= 0.0) throw argument_error("generate_rss: tx power must be positive");
    if (params.pathloss_exponent < 2.0) throw argument_error("generate_rss: pathloss exponent must be >= 2");

    RssMatrix rss;
    double floor_scale = params.side;
    if (params.positions.has_value()) {
        rss.positions = *params.positions;
        if (static_cast<int>(rss.positions.size()) != n_clients) {
            throw argument_error("generate_rss: explicit positions count does not match n_clients");
        }
        double min_x = rss.positions[0].first, max_x = min_x;
        double min_y = rss.positions[0].second, max_y = min_y;
        for (const auto& [x, y] : rss.positions) {
            min_x = std::min(min_x, x); max_x = std::max(max_x, x);
            min_y = std::min(min_y, y); max_y = std::max(max_y, y);
        }
        floor_scale = std::max(max_x - min_x, max_y - min_y);
        if (floor_scale <= 0.0) floor_scale = 1.0;
    } else {
        if (params.side <= 0.0) throw argument_error("generate_rss: square side must be positive");
        Rng rng(params.seed);
        std::uniform_real_distribution<double> coord(0.0, params.side);
        rss.positions.reserve(static_cast<size_t>(n_clients));
        for (int i = 0; i < n_clients; ++i) {
            const double x = coord(rng);
            const double y = coord(rng);
            rss.positions.emplace_back(x, y);
        }
    }

    const double dist_floor = 1e-3 * floor_scale;
    rss.w.resize(n_clients, n_clients);
    rss.w.setConstant(std::numeric_limits<double>::infinity());
    for (int i = 0; i < n_clients; ++i) {
        for (int j = i + 1; j < n_clients; ++j) {
            const double dx = rss.positions[i].first - rss.positions[j].first;
            const double dy = rss.positions[i].second - rss.positions[j].second;
            const double dist = std::max(std::sqrt(dx * dx + dy * dy), dist_floor);
            const double w = params.tx_power * std::pow(dist, -params.pathloss_exponent);
            rss.w(i, j) = w;
            rss.w(j, i) = w;
        }
    }
    return rss;
}

Matrix failure_probability(const RssMatrix& rss, double rate, double noise_power) {
    if (rate <= 0.0 || noise_power <= 0.0) {
        throw argument_error("failure_probability: rate and noise power must be positive");
    }
    const Eigen::Index n = rss.w.rows();
    if (rss.w.cols() != n) throw argument_error("failure_probability: W must be square");

    const double snr_gap = (std::exp2(rate) - 1.0) * noise_power;
    Matrix pd = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;  // convention: diagonal 0, masked upstream
            const double w = rss.w(i, j);
            if (!(w > 0.0)) {
                throw argument_error("failure_probability: nonpositive RSS at (" +
                                     std::to_string(i) + "," + std::to_string(j) + ")");
            }
            pd(i, j) = 1.0 - std::exp(-snr_gap / w);
        }
    }
    return pd;
}

}  // namespace fedlink
