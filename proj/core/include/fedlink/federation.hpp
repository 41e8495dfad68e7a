#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "fedlink/autoenc.hpp"

namespace fedlink {

enum class Scheme { fedavg, fedsgd, fedprox };

std::string scheme_name(Scheme s);
Scheme scheme_from_name(const std::string& name);

struct FlConfig {
    Scheme scheme = Scheme::fedavg;
    int total_iters = 1500;
    int tau_a = 10;  // aggregation interval in minibatch iterations
    double eta = 0.05;
    int batch_size = 32;
    double mu = 0.1;  // fedprox only
    int straggler_count = 0;
    uint64_t seed = 0;
};

/// iters minibatch steps with uniformly sampled minibatches. FedProx adds
/// the proximal pull toward global_params; FedAvg ignores mu.
Model local_train(const Model& m, const Matrix& data, int iters, int batch_size, double eta,
                  Scheme scheme, const Vector& global_params, double mu, Rng& rng);

/// Draws one minibatch (without replacement; whole set when batch_size >= n).
Matrix sample_minibatch(const Matrix& data, int batch_size, Rng& rng);

Model aggregate_fedavg(const std::vector<Model>& models, const std::vector<double>& weights);

/// One FedSGD server step: global <- global - eta * weighted mean gradient.
Model aggregate_fedsgd(const Model& global, const std::vector<Vector>& grads,
                       const std::vector<double>& weights, double eta);

std::vector<int> select_stragglers(int n_clients, int count, uint64_t seed);

struct FlTraceRow {
    int iteration = 0;
    Scheme scheme = Scheme::fedavg;
    double global_loss = 0.0;
    std::optional<double> probe_accuracy;
    int straggler_count = 0;
};

struct FlResult {
    std::vector<FlTraceRow> rows;
    Model final_global;
    std::vector<int> stragglers;
};

using ProbeFn = std::function<double(const Model&)>;

/// The FL loop: rounds of tau_a local iterations (FedSGD: one gradient per
/// round at the current global model), aggregation over non-stragglers,
/// broadcast, and a global-loss log entry per aggregation. Stragglers keep
/// training and keep receiving broadcasts; their parameters never enter the
/// aggregate, but their data still counts in the evaluation objective.
/// client_seed_override fixes each client's RNG stream (tests use this to
/// compare against a centralized run).
FlResult run_fl(const FlConfig& cfg, const std::vector<LocalDataset>& datasets,
                const Model& init_model, const ProbeFn& probe = nullptr, int probe_every = 0,
                const std::optional<std::vector<uint64_t>>& client_seed_override = std::nullopt);

/// Evaluation objective: sum_i L(model, D_i) / sum_i |D_i| over all clients.
double global_objective(const Model& m, const std::vector<LocalDataset>& datasets);

}  // namespace fedlink
