#pragma once

#include <vector>

#include "fedlink/channel.hpp"
#include "fedlink/embedding.hpp"

namespace fedlink {

/// gamma(t) = min(1, t / t_anneal): pure exploration at t = 0, full weight
/// on accumulated Q values once t reaches t_anneal. The same schedule feeds
/// the global-reward mixing term and the policy.
struct GammaSchedule {
    double t_anneal = 1.0;

    double operator()(int t) const {
        if (t_anneal <= 0.0) return 1.0;
        return std::min(1.0, double(t) / t_anneal);
    }
};

struct RewardParams {
    double alpha1 = 1.0;  // dissimilarity weight
    double alpha2 = 1.0;  // failure-probability weight
    double beta = 1.0;    // centroid distance threshold
    GammaSchedule gamma;
};

/// One agent's learning state. q holds accumulated action values for
/// picking each transmitter; the self entry is masked with -inf and all
/// unmasked entries stay strictly positive (updates re-shift if needed so
/// the policy's normalization is always well defined).
struct QState {
    int client_id = 0;
    Vector q;
    int t = 0;  // buffer-update counter
    int capacity = 0;
    std::vector<std::pair<int, double>> buffer;  // (action, global reward)
    std::vector<Vector> q_history;

    int n_clients() const { return static_cast<int>(q.size()); }
};

QState make_qstate(int client_id, int n_clients, int buffer_capacity);

struct DissimilarityResult {
    int lambda = 0;                 // number of eligible transmitter clusters
    std::vector<int> per_cluster;   // lambda_ij_m for each transmitter cluster m
    std::vector<int> eligible;      // transmitter cluster ids passing both gates
};

/// lambda_ij_m counts receiver centroids farther than beta from transmitter
/// cluster m; the cluster is eligible when every receiver centroid is far
/// (lambda_ij_m = k_i) and the trust entry permits it.
DissimilarityResult dissimilarity(const ClusterModel& receiver, const ClusterModel& transmitter,
                                  const Eigen::VectorXi& trust_row, double beta);

struct DissimilarityReport {
    Eigen::MatrixXi lambda;                                // N x N, lambda(i,j), diagonal 0
    std::vector<std::vector<DissimilarityResult>> detail;  // [receiver][transmitter]

    double offdiag_mean() const;
};

DissimilarityReport compute_dissimilarity(const std::vector<ClusterModel>& models,
                                          const std::vector<TrustMatrix>& trust, double beta);

double local_reward(int lambda, double p_fail, const RewardParams& params);

/// R = r_ij + gamma_t * (mean(all local rewards this episode) - r_net_prev).
double global_reward(double r_ij, const std::vector<double>& all_rewards, int n_clients,
                     double r_net_prev, double gamma_t);

/// Eq-5 style mixing of normalized Q values with fresh uniform draws; one
/// uniform per candidate per call. Always a valid distribution with zero
/// self mass.
Vector policy_probabilities(const QState& qs, double gamma_t, Rng& rng);

int sample_action(const Vector& pi, Rng& rng);

/// Appends to the experience buffer; true when the buffer just filled.
bool buffer_push(QState& qs, int action, double reward);

/// Local reward of the buffer's most frequent action. Frequency ties break
/// to the higher local reward, then the lower action index.
double modal_link_reward(const QState& qs, const Vector& local_rewards_by_action);

double network_performance(const std::vector<double>& modal_rewards);

/// Adds the per-action average of buffered global rewards into q, clears
/// the buffer, advances t and snapshots q into q_history.
void q_update(QState& qs);

/// argmax over unmasked actions, ties to the lowest index.
int optimal_policy(const QState& qs);

struct Graph {
    struct Edge {
        int transmitter = 0;
        int receiver = 0;
    };
    std::vector<Edge> edges;  // at most one incoming edge per receiver
};

void validate_graph(const Graph& g, int n_clients);

struct DiscoveryTraceRow {
    int episode = 0;
    int client = 0;
    int action = 0;
    double r_local = 0.0;
    double r_global = 0.0;
    double r_net_at_last_update = 0.0;
};

struct DiscoveryResult {
    Graph graph;
    DissimilarityReport report;
    Matrix reward_table;  // static r_ij table, N x N
    std::vector<QState> agents;
    std::vector<DiscoveryTraceRow> trace;
    double final_r_net = 0.0;
    int updates = 0;
};

/// Runs the full multi-agent episode loop: per-episode action sampling and
/// reward sharing, buffer-triggered network-performance and Q updates, and
/// final argmax edge extraction. lambda and P_D are static, so local
/// rewards are precomputed into a table once. A trailing partial buffer is
/// discarded. Each agent draws from its own seeded stream.
DiscoveryResult discover_graph(const std::vector<ClusterModel>& models,
                               const std::vector<TrustMatrix>& trust, const Matrix& p_fail,
                               const RewardParams& params, int episodes, int buffer_capacity,
                               uint64_t seed);

}  // namespace fedlink
