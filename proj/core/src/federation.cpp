#include "fedlink/federation.hpp"

#include <algorithm>
#include <numeric>

namespace fedlink {

std::string scheme_name(Scheme s) {
    switch (s) {
        case Scheme::fedavg: return "fedavg";
        case Scheme::fedsgd: return "fedsgd";
        case Scheme::fedprox: return "fedprox";
    }
    return "unknown";
}

Scheme scheme_from_name(const std::string& name) {
    if (name == "fedavg") return Scheme::fedavg;
    if (name == "fedsgd") return Scheme::fedsgd;
    if (name == "fedprox") return Scheme::fedprox;
    throw argument_error("unknown FL scheme: " + name);
}

Matrix sample_minibatch(const Matrix& data, int batch_size, Rng& rng) {
    const int n = static_cast<int>(data.rows());
    if (n < 1) throw argument_error("sample_minibatch: empty data");
    if (batch_size >= n) return data;

    // partial Fisher-Yates: first batch_size entries of a seeded shuffle
    std::vector<int> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < batch_size; ++i) {
        std::uniform_int_distribution<int> pick(i, n - 1);
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(pick(rng))]);
    }
    Matrix batch(batch_size, data.cols());
    for (int i = 0; i < batch_size; ++i) batch.row(i) = data.row(idx[static_cast<size_t>(i)]);
    return batch;
}

Model local_train(const Model& m, const Matrix& data, int iters, int batch_size, double eta,
                  Scheme scheme, const Vector& global_params, double mu, Rng& rng) {
    if (iters < 1) throw argument_error("local_train: iters must be >= 1");
    if (batch_size < 1) throw argument_error("local_train: batch size must be >= 1");

    Model cur = m;
    for (int it = 0; it < iters; ++it) {
        const Matrix batch = sample_minibatch(data, batch_size, rng);
        if (scheme == Scheme::fedprox) {
            cur = prox_sgd_step(cur, batch, eta, mu, global_params);
        } else {
            cur = sgd_step(cur, batch, eta);
        }
    }
    return cur;
}

Model aggregate_fedavg(const std::vector<Model>& models, const std::vector<double>& weights) {
    if (models.empty()) throw argument_error("aggregate_fedavg: no participants");
    if (weights.size() != models.size()) throw argument_error("aggregate_fedavg: weight count mismatch");

    double total = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw argument_error("aggregate_fedavg: negative weight");
        total += w;
    }
    if (total <= 0.0) throw argument_error("aggregate_fedavg: weights sum to zero");

    Model out = models.front();
    out.params = Vector::Zero(out.params.size());
    for (size_t i = 0; i < models.size(); ++i) {
        if (models[i].params.size() != out.params.size() || models[i].layer_dims != out.layer_dims) {
            throw argument_error("aggregate_fedavg: model shape mismatch");
        }
        out.params += (weights[i] / total) * models[i].params;
    }
    if (!out.params.allFinite()) throw numeric_error("aggregate_fedavg: non-finite aggregate");
    return out;
}

Model aggregate_fedsgd(const Model& global, const std::vector<Vector>& grads,
                       const std::vector<double>& weights, double eta) {
    if (grads.empty()) throw argument_error("aggregate_fedsgd: no participants");
    if (weights.size() != grads.size()) throw argument_error("aggregate_fedsgd: weight count mismatch");

    double total = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw argument_error("aggregate_fedsgd: negative weight");
        total += w;
    }
    if (total <= 0.0) throw argument_error("aggregate_fedsgd: weights sum to zero");

    Vector mean = Vector::Zero(global.params.size());
    for (size_t i = 0; i < grads.size(); ++i) {
        if (grads[i].size() != global.params.size()) {
            throw argument_error("aggregate_fedsgd: gradient dimension mismatch");
        }
        mean += (weights[i] / total) * grads[i];
    }
    Model out = global;
    out.params -= eta * mean;
    if (!out.params.allFinite()) throw numeric_error("aggregate_fedsgd: non-finite aggregate");
    return out;
}

std::vector<int> select_stragglers(int n_clients, int count, uint64_t seed) {
    if (count < 0 || count >= n_clients) {
        throw argument_error("select_stragglers: count must be in [0, n_clients)");
    }
    std::vector<int> idx(static_cast<size_t>(n_clients));
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<size_t>(count));
    std::sort(idx.begin(), idx.end());
    return idx;
}

double global_objective(const Model& m, const std::vector<LocalDataset>& datasets) {
    double loss = 0.0;
    long n = 0;
    for (const auto& ld : datasets) {
        loss += mse_loss(forward(m, ld.points()).reconstruction, ld.points());
        n += ld.n();
    }
    if (n == 0) throw argument_error("global_objective: no data");
    return loss / double(n);
}

FlResult run_fl(const FlConfig& cfg, const std::vector<LocalDataset>& datasets,
                const Model& init_model, const ProbeFn& probe, int probe_every,
                const std::optional<std::vector<uint64_t>>& client_seed_override) {
    const int n = static_cast<int>(datasets.size());
    if (n < 1) throw argument_error("run_fl: no clients");
    if (cfg.tau_a < 1) throw argument_error("run_fl: tau_a must be >= 1");
    if (cfg.total_iters < cfg.tau_a) throw argument_error("run_fl: total_iters must cover one aggregation");
    if (client_seed_override && static_cast<int>(client_seed_override->size()) != n) {
        throw argument_error("run_fl: seed override must cover every client");
    }

    FlResult result;
    result.stragglers = cfg.straggler_count > 0
                            ? select_stragglers(n, cfg.straggler_count, derive_seed(cfg.seed, "stragglers"))
                            : std::vector<int>{};
    std::vector<char> is_straggler(static_cast<size_t>(n), 0);
    for (int s : result.stragglers) is_straggler[static_cast<size_t>(s)] = 1;

    std::vector<Rng> rngs;
    rngs.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        rngs.emplace_back(client_seed_override ? (*client_seed_override)[static_cast<size_t>(i)]
                                               : derive_seed(cfg.seed, "fl-client", static_cast<uint64_t>(i)));
    }

    std::vector<double> sizes(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) sizes[static_cast<size_t>(i)] = double(datasets[static_cast<size_t>(i)].n());

    Model global = init_model;
    // FedSGD aggregates a gradient every iteration (clients never drift from
    // the broadcast model); FedAvg/FedProx aggregate locally-trained models
    // every tau_a iterations. The loss is logged once per tau_a iterations
    // for every scheme.
    const int log_rounds = cfg.total_iters / cfg.tau_a;
    result.rows.reserve(static_cast<size_t>(log_rounds));

    for (int round = 1; round <= log_rounds; ++round) {
        if (cfg.scheme == Scheme::fedsgd) {
            for (int step = 0; step < cfg.tau_a; ++step) {
                std::vector<Vector> grads;
                std::vector<double> weights;
                for (int i = 0; i < n; ++i) {
                    const Matrix batch = sample_minibatch(datasets[static_cast<size_t>(i)].points(),
                                                          cfg.batch_size, rngs[static_cast<size_t>(i)]);
                    Vector g = backward(global, batch);
                    if (!is_straggler[static_cast<size_t>(i)]) {
                        grads.push_back(std::move(g));
                        weights.push_back(sizes[static_cast<size_t>(i)]);
                    }
                }
                global = aggregate_fedsgd(global, grads, weights, cfg.eta);
            }
        } else {
            std::vector<Model> participants;
            std::vector<double> weights;
            for (int i = 0; i < n; ++i) {
                Model local = local_train(global, datasets[static_cast<size_t>(i)].points(), cfg.tau_a,
                                          cfg.batch_size, cfg.eta, cfg.scheme, global.params, cfg.mu,
                                          rngs[static_cast<size_t>(i)]);
                if (!is_straggler[static_cast<size_t>(i)]) {
                    participants.push_back(std::move(local));
                    weights.push_back(sizes[static_cast<size_t>(i)]);
                }
            }
            global = aggregate_fedavg(participants, weights);
        }

        FlTraceRow row;
        row.iteration = round * cfg.tau_a;
        row.scheme = cfg.scheme;
        row.global_loss = global_objective(global, datasets);
        row.straggler_count = cfg.straggler_count;
        const bool last = round == log_rounds;
        if (probe && ((probe_every > 0 && round % probe_every == 0) || last)) {
            row.probe_accuracy = probe(global);
        }
        result.rows.push_back(std::move(row));
    }

    result.final_global = std::move(global);
    return result;
}

}  // namespace fedlink
