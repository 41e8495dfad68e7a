#pragma once

#include <vector>

#include "fedlink/autoenc.hpp"
#include "fedlink/graphrl.hpp"

namespace fedlink {

/// Normalized reconstruction loss after the one-step pre-training pass;
/// the yardstick the reserve probe is compared against.
struct BaselineLoss {
    int client = 0;
    double value = 0.0;
};

/// One full-batch gradient step on the local data, then the normalized
/// loss on that same data.
std::pair<Model, BaselineLoss> pretrain_baseline(const Model& m, const LocalDataset& ld, double eta);

struct Reserve {
    std::vector<int> indices;  // rows in the transmitter dataset
    Matrix points;
};

/// Uniform sample without replacement from the transmitter's cluster k.
/// Requires the trust entry to permit it; callers skip denied clusters.
Reserve select_reserve(const LocalDataset& transmitter, int cluster, int trust_entry, int size,
                       uint64_t seed);

/// True when the reserve's normalized loss under the receiver model
/// strictly exceeds the receiver's baseline: the probe looks anomalous, so
/// the transfer should help.
bool benefit_test(const Model& receiver_model, const BaselineLoss& baseline, const Matrix& reserve_points);

enum class TransferMode { copy, move };

struct ExchangePlan {
    Graph::Edge link;
    std::vector<int> eligible_clusters;
    int reserve_size = 20;
    int transfer_count = 100;
    TransferMode mode = TransferMode::copy;
    int diversity_threshold = 0;  // move mode keeps sender clusters above this
    bool run_benefit_test = true;
};

struct ExchangeReport {
    struct Row {
        int receiver = 0;
        int transmitter = 0;
        int cluster = 0;
        int eligible = 0;
        int benefit_pass = 0;
        int points_moved = 0;
    };
    std::vector<Row> rows;

    int total_moved() const;
};

/// Runs the per-edge, per-cluster benefit test and executes the transfers.
/// Copy mode leaves senders untouched; move mode never drops a sender
/// cluster below the diversity threshold. Accepted foreign clusters bump
/// the receiver's suspected cluster count. Transferred points carry
/// provenance tags so trust can be audited afterwards.
ExchangeReport execute_exchange(const Graph& graph, const std::vector<ExchangePlan>& plans,
                                const std::vector<Model>& receiver_models,
                                const std::vector<BaselineLoss>& baselines,
                                const std::vector<TrustMatrix>& trust,
                                std::vector<LocalDataset>& datasets, uint64_t seed);

/// Counts transferred points whose provenance violates the transmitter's
/// trust matrix. Zero on every compliant run.
int audit_trust_violations(const std::vector<LocalDataset>& datasets,
                           const std::vector<TrustMatrix>& trust);

}  // namespace fedlink
