#include "fedlink/graphrl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace fedlink {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

QState make_qstate(int client_id, int n_clients, int buffer_capacity) {
    if (n_clients < 2) throw argument_error("qstate: need at least 2 clients");
    if (client_id < 0 || client_id >= n_clients) throw argument_error("qstate: client id out of range");
    if (buffer_capacity < 1) throw argument_error("qstate: buffer capacity must be >= 1");
    QState qs;
    qs.client_id = client_id;
    qs.q = Vector::Constant(n_clients, 1.0 / double(n_clients));  // small equal values
    qs.q(client_id) = kNegInf;                                    // self masked
    qs.capacity = buffer_capacity;
    qs.buffer.reserve(static_cast<size_t>(buffer_capacity));
    return qs;
}

DissimilarityResult dissimilarity(const ClusterModel& receiver, const ClusterModel& transmitter,
                                  const Eigen::VectorXi& trust_row, double beta) {
    if (receiver.basis_fingerprint != transmitter.basis_fingerprint) {
        throw state_error("dissimilarity: cluster models come from different PCA bases");
    }
    if (trust_row.size() != transmitter.centroids.rows()) {
        throw argument_error("dissimilarity: trust row length does not match transmitter clusters");
    }

    const int k_i = static_cast<int>(receiver.centroids.rows());
    const int k_j = static_cast<int>(transmitter.centroids.rows());

    DissimilarityResult res;
    res.per_cluster.resize(static_cast<size_t>(k_j));
    for (int m = 0; m < k_j; ++m) {
        int far = 0;
        for (int n = 0; n < k_i; ++n) {
            const double dist = (receiver.centroids.row(n) - transmitter.centroids.row(m)).norm();
            if (dist > beta) ++far;
        }
        res.per_cluster[static_cast<size_t>(m)] = far;
        if (far == k_i && trust_row(m) == 1) {
            res.eligible.push_back(m);
        }
    }
    res.lambda = static_cast<int>(res.eligible.size());
    return res;
}

double DissimilarityReport::offdiag_mean() const {
    const Eigen::Index n = lambda.rows();
    if (n < 2) return 0.0;
    long sum = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i != j) sum += lambda(i, j);
        }
    }
    return double(sum) / double(n * (n - 1));
}

DissimilarityReport compute_dissimilarity(const std::vector<ClusterModel>& models,
                                          const std::vector<TrustMatrix>& trust, double beta) {
    const int n = static_cast<int>(models.size());
    if (static_cast<int>(trust.size()) != n) {
        throw argument_error("compute_dissimilarity: one trust matrix per client required");
    }
    DissimilarityReport report;
    report.lambda = Eigen::MatrixXi::Zero(n, n);
    report.detail.assign(static_cast<size_t>(n), std::vector<DissimilarityResult>(static_cast<size_t>(n)));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const Eigen::VectorXi row = trust[static_cast<size_t>(j)].entries.row(i).transpose();
            auto res = dissimilarity(models[static_cast<size_t>(i)], models[static_cast<size_t>(j)], row, beta);
            report.lambda(i, j) = res.lambda;
            report.detail[static_cast<size_t>(i)][static_cast<size_t>(j)] = std::move(res);
        }
    }
    return report;
}

double local_reward(int lambda, double p_fail, const RewardParams& params) {
    if (lambda < 0) throw argument_error("local_reward: lambda must be nonnegative");
    if (p_fail < 0.0 || p_fail >= 1.0) throw argument_error("local_reward: p_fail must be in [0,1)");
    return params.alpha1 * double(lambda) - params.alpha2 * p_fail;
}

double global_reward(double r_ij, const std::vector<double>& all_rewards, int n_clients,
                     double r_net_prev, double gamma_t) {
    if (static_cast<int>(all_rewards.size()) != n_clients) {
        throw sync_error("global_reward: expected one shared local reward per client");
    }
    double mean = 0.0;
    for (double r : all_rewards) mean += r;
    mean /= double(n_clients);
    return r_ij + gamma_t * (mean - r_net_prev);
}

Vector policy_probabilities(const QState& qs, double gamma_t, Rng& rng) {
    const int n = qs.n_clients();
    const int self = qs.client_id;

    double q_sum = 0.0;
    for (int j = 0; j < n; ++j) {
        if (j != self) q_sum += qs.q(j);
    }
    if (!(q_sum > 0.0)) throw state_error("policy: unmasked Q mass must be positive");

    std::uniform_real_distribution<double> u(0.0, 1.0);
    Vector weights = Vector::Zero(n);
    double total = 0.0;
    for (int j = 0; j < n; ++j) {
        if (j == self) continue;
        const double w = gamma_t * (qs.q(j) / q_sum) + (1.0 - gamma_t) * u(rng);
        weights(j) = w;
        total += w;
    }
    if (total <= 0.0) {
        // can only happen at gamma extremes with degenerate draws
        for (int j = 0; j < n; ++j) weights(j) = (j == self) ? 0.0 : 1.0 / double(n - 1);
        return weights;
    }
    return weights / total;
}

int sample_action(const Vector& pi, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double target = u(rng);
    double acc = 0.0;
    int last = -1;
    for (Eigen::Index j = 0; j < pi.size(); ++j) {
        if (pi(j) <= 0.0) continue;
        last = static_cast<int>(j);
        acc += pi(j);
        if (target < acc) return static_cast<int>(j);
    }
    if (last < 0) throw argument_error("sample_action: not a distribution");
    return last;  // guard against rounding at the top end
}

bool buffer_push(QState& qs, int action, double reward) {
    if (static_cast<int>(qs.buffer.size()) >= qs.capacity) {
        throw state_error("buffer_push: buffer already full, flush before pushing");
    }
    if (action < 0 || action >= qs.n_clients() || action == qs.client_id) {
        throw argument_error("buffer_push: invalid action");
    }
    qs.buffer.emplace_back(action, reward);
    return static_cast<int>(qs.buffer.size()) == qs.capacity;
}

double modal_link_reward(const QState& qs, const Vector& local_rewards_by_action) {
    if (qs.buffer.empty()) throw state_error("modal_link_reward: buffer is empty");
    if (local_rewards_by_action.size() != qs.q.size()) {
        throw argument_error("modal_link_reward: reward vector length mismatch");
    }

    std::map<int, int> counts;
    for (const auto& [action, reward] : qs.buffer) counts[action]++;

    int best_action = -1;
    int best_count = 0;
    for (const auto& [action, count] : counts) {
        bool take = false;
        if (best_action < 0 || count > best_count) {
            take = true;
        } else if (count == best_count) {
            const double r_new = local_rewards_by_action(action);
            const double r_best = local_rewards_by_action(best_action);
            take = r_new > r_best || (r_new == r_best && action < best_action);
        }
        if (take) {
            best_action = action;
            best_count = count;
        }
    }
    return local_rewards_by_action(best_action);
}

double network_performance(const std::vector<double>& modal_rewards) {
    if (modal_rewards.empty()) throw argument_error("network_performance: no rewards");
    double sum = 0.0;
    for (double r : modal_rewards) sum += r;
    return sum / double(modal_rewards.size());
}

void q_update(QState& qs) {
    if (static_cast<int>(qs.buffer.size()) != qs.capacity) {
        throw state_error("q_update: buffer must be full");
    }

    std::map<int, std::pair<double, int>> acc;  // action -> (reward sum, count)
    for (const auto& [action, reward] : qs.buffer) {
        auto& slot = acc[action];
        slot.first += reward;
        slot.second += 1;
    }
    for (const auto& [action, slot] : acc) {
        qs.q(action) += slot.first / double(slot.second);
    }

    // Keep the policy's normalization valid: all unmasked entries must stay
    // positive. A uniform shift leaves the final argmax unchanged.
    double min_q = std::numeric_limits<double>::infinity();
    for (int j = 0; j < qs.n_clients(); ++j) {
        if (j != qs.client_id) min_q = std::min(min_q, qs.q(j));
    }
    if (min_q <= 0.0) {
        const double shift = 1e-6 - min_q;
        for (int j = 0; j < qs.n_clients(); ++j) {
            if (j != qs.client_id) qs.q(j) += shift;
        }
    }

    qs.buffer.clear();
    qs.t += 1;
    qs.q_history.push_back(qs.q);
}

int optimal_policy(const QState& qs) {
    int best = -1;
    for (int j = 0; j < qs.n_clients(); ++j) {
        if (j == qs.client_id) continue;
        if (best < 0 || qs.q(j) > qs.q(best)) best = j;
    }
    return best;
}

void validate_graph(const Graph& g, int n_clients) {
    std::vector<int> incoming(static_cast<size_t>(n_clients), 0);
    for (const auto& e : g.edges) {
        if (e.receiver < 0 || e.receiver >= n_clients || e.transmitter < 0 || e.transmitter >= n_clients) {
            throw argument_error("graph: edge endpoint out of range");
        }
        if (e.receiver == e.transmitter) throw argument_error("graph: self loop");
        if (++incoming[static_cast<size_t>(e.receiver)] > 1) {
            throw argument_error("graph: receiver has more than one incoming edge");
        }
    }
}

DiscoveryResult discover_graph(const std::vector<ClusterModel>& models,
                               const std::vector<TrustMatrix>& trust, const Matrix& p_fail,
                               const RewardParams& params, int episodes, int buffer_capacity,
                               uint64_t seed) {
    const int n = static_cast<int>(models.size());
    if (n < 2) throw argument_error("discover_graph: need at least 2 clients");
    if (episodes < 1 || buffer_capacity < 1) {
        throw argument_error("discover_graph: episodes and buffer capacity must be >= 1");
    }
    if (p_fail.rows() != n || p_fail.cols() != n) {
        throw argument_error("discover_graph: P_D shape does not match client count");
    }

    DiscoveryResult result;
    result.report = compute_dissimilarity(models, trust, params.beta);

    // lambda and P_D are static during discovery, so the local reward for
    // every (receiver, transmitter) pair is a fixed table.
    result.reward_table = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            result.reward_table(i, j) = local_reward(result.report.lambda(i, j), p_fail(i, j), params);
        }
    }

    std::vector<Rng> rngs;
    rngs.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) rngs.push_back(make_rng(seed, "agent", static_cast<uint64_t>(i)));

    result.agents.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) result.agents.push_back(make_qstate(i, n, buffer_capacity));

    result.trace.reserve(static_cast<size_t>(episodes) * static_cast<size_t>(n));
    double r_net_prev = 0.0;
    std::vector<int> actions(static_cast<size_t>(n));
    std::vector<double> rewards(static_cast<size_t>(n));
    std::vector<double> modal(static_cast<size_t>(n));

    for (int e = 0; e < episodes; ++e) {
        const double gamma_t = params.gamma(result.agents.front().t);

        for (int i = 0; i < n; ++i) {
            auto& qs = result.agents[static_cast<size_t>(i)];
            const Vector pi = policy_probabilities(qs, gamma_t, rngs[static_cast<size_t>(i)]);
            actions[static_cast<size_t>(i)] = sample_action(pi, rngs[static_cast<size_t>(i)]);
            rewards[static_cast<size_t>(i)] = result.reward_table(i, actions[static_cast<size_t>(i)]);
        }

        // reward-sharing barrier: everyone sees the same episode mean
        bool full = false;
        for (int i = 0; i < n; ++i) {
            const double r_global =
                global_reward(rewards[static_cast<size_t>(i)], rewards, n, r_net_prev, gamma_t);
            full = buffer_push(result.agents[static_cast<size_t>(i)], actions[static_cast<size_t>(i)], r_global);
            result.trace.push_back({e, i, actions[static_cast<size_t>(i)], rewards[static_cast<size_t>(i)],
                                    r_global, r_net_prev});
        }

        if (full) {
            for (int i = 0; i < n; ++i) {
                modal[static_cast<size_t>(i)] =
                    modal_link_reward(result.agents[static_cast<size_t>(i)], result.reward_table.row(i).transpose());
            }
            r_net_prev = network_performance(modal);
            for (int i = 0; i < n; ++i) q_update(result.agents[static_cast<size_t>(i)]);
            result.updates += 1;
        }
    }
    // a trailing partial buffer (episodes % capacity != 0) is discarded

    result.final_r_net = r_net_prev;
    result.graph.edges.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        result.graph.edges.push_back({optimal_policy(result.agents[static_cast<size_t>(i)]), i});
    }
    validate_graph(result.graph, n);
    return result;
}

}  // namespace fedlink
