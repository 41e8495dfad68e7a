#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fedlink/common.hpp"

namespace fedlink {

// Experiment configuration, one block per pipeline stage. Every field has
// a default, so {} is a valid config; unknown keys are rejected with their
// full path. Optionals resolve at runtime: reward.beta falls back to a
// percentile of inter-client centroid distances, reward.gamma_t_anneal to
// the number of buffer updates.

struct DatasetConfig {
    std::string format = "synthetic-gmm";  // synthetic-gmm | idx-images | cifar10-binary
    std::string name = "synthetic";
    std::string mean_layout = "random";  // random | orthogonal
    std::optional<std::vector<std::vector<double>>> means;  // overrides mean_layout
    int classes = 10;
    int dim = 16;
    int per_class = 300;
    double sigma = 0.05;
    std::string images;                  // idx-images
    std::string labels;                  // idx-images
    std::vector<std::string> batches;    // cifar10-binary

    bool operator==(const DatasetConfig&) const = default;
};

struct PartitionConfig {
    int n_clients = 10;
    int classes_per_client = 3;
    std::string layout = "circular";  // circular | random

    bool operator==(const PartitionConfig&) const = default;
};

struct TrustConfig {
    std::string policy = "full";  // full | bernoulli | deny-list
    double p = 1.0;
    std::vector<std::pair<int, int>> deny;  // (receiver, cluster)

    bool operator==(const TrustConfig&) const = default;
};

struct ChannelBlockConfig {
    double rate = 1.0;
    double noise_power = 0.05;
    double tx_power = 1.0;
    double pathloss_exponent = 2.0;
    double side = 5.0;
    std::optional<std::vector<std::pair<double, double>>> positions;

    bool operator==(const ChannelBlockConfig&) const = default;
};

struct EmbeddingConfig {
    int components = 16;
    int kmeans_max_iters = 50;
    double kmeans_tol = 1e-9;
    int kmeans_restarts = 10;

    bool operator==(const EmbeddingConfig&) const = default;
};

struct RewardConfig {
    double alpha1 = 1.0;
    double alpha2 = 1.0;
    std::optional<double> beta;     // null -> beta_percentile of centroid distances
    double beta_percentile = 25.0;
    std::optional<double> gamma_t_anneal;  // null -> episodes / buffer_size
    int episodes = 600;
    int buffer_size = 90;

    bool operator==(const RewardConfig&) const = default;
};

struct ExchangeBlockConfig {
    int reserve_size = 20;
    int transfer_count = 100;
    std::string mode = "copy";  // copy | move
    int diversity_threshold = 10;
    double pretrain_eta = 4.0;
    bool uniform_benefit_test = true;

    bool operator==(const ExchangeBlockConfig&) const = default;
};

struct FlBlockConfig {
    std::vector<std::string> schemes = {"fedavg", "fedsgd", "fedprox"};
    int total_iters = 1500;
    int tau_a = 10;
    double eta = 1.0;
    int batch_size = 32;
    double mu = 0.1;
    int straggler_count = 0;
    std::vector<int> hidden_dims = {128};
    int bottleneck = 4;
    std::string activation = "sigmoid";  // sigmoid | relu
    double probe_holdout = 0.1;
    double probe_train_frac = 0.7;
    int probe_iters = 500;
    double probe_eta = 0.5;
    int probe_every = 0;  // 0: evaluate the probe on the final round only

    bool operator==(const FlBlockConfig&) const = default;
};

struct OutputConfig {
    int link_quality_samples = 50;
    bool dump_channel = true;

    bool operator==(const OutputConfig&) const = default;
};

struct ExperimentConfig {
    uint64_t master_seed = 1;
    std::string output_dir = "out";
    std::vector<std::string> variants = {"proposed", "uniform", "non-iid"};
    DatasetConfig dataset;
    PartitionConfig partition;
    TrustConfig trust;
    ChannelBlockConfig channel;
    EmbeddingConfig embedding;
    RewardConfig reward;
    ExchangeBlockConfig exchange;
    FlBlockConfig fl;
    OutputConfig outputs;

    bool operator==(const ExperimentConfig&) const = default;
};

ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin = "<inline>");

/// Canonical JSON form of a resolved config (keys sorted, optionals null).
std::string serialize_config(const ExperimentConfig& cfg, int indent = 2);

/// Hash over the semantic fields (output_dir excluded so relocating output
/// never changes file contents).
uint64_t config_hash(const ExperimentConfig& cfg);

}  // namespace fedlink
