#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedlink/config.hpp"
#include "fedlink/exchange.hpp"
#include "fedlink/federation.hpp"

namespace fedlink {

/// Stage-tagged failure surfaced by the pipeline and the CLI.
struct pipeline_error : std::runtime_error {
    std::string stage;
    pipeline_error(std::string stage_name, const std::string& what)
        : std::runtime_error("stage " + stage_name + ": " + what), stage(std::move(stage_name)) {}
};

/// Everything the variants share: partition, channel, shared basis,
/// per-client clustering, trust, the pre-exchange dissimilarity and the
/// common model init. Probe data is held out before partitioning and never
/// enters FL.
struct PreparedExperiment {
    int n_clients = 0;
    int n_classes = 0;
    std::vector<LocalDataset> clients;
    std::vector<TrustMatrix> trust;
    RssMatrix rss;
    Matrix p_fail;
    PcaBasis basis;
    std::vector<ClusterModel> clusters;
    double beta = 0.0;  // resolved threshold
    RewardParams reward_params;
    DissimilarityReport lambda_pre;
    Model init_model;

    Matrix probe_train_points;
    std::vector<int> probe_train_labels;
    Matrix probe_test_points;
    std::vector<int> probe_test_labels;
};

PreparedExperiment prepare_experiment(const ExperimentConfig& cfg);

/// Linear-probe evaluator bound to the held-out split: embeds with the
/// model's encoder, fits the head on the train part, scores on the test part.
ProbeFn make_probe_fn(const PreparedExperiment& prep, const ExperimentConfig& cfg);

struct VariantOutcome {
    std::string name;
    std::optional<DiscoveryResult> discovery;  // proposed
    std::optional<Graph> graph;                // proposed, uniform
    std::optional<ExchangeReport> exchange;    // proposed, uniform
    std::vector<LocalDataset> datasets;        // what FL trained on
    std::optional<DissimilarityReport> lambda_post;  // proposed
    std::vector<std::pair<Scheme, FlResult>> fl;

    double final_loss(Scheme s) const;
    std::optional<double> final_probe_accuracy(Scheme s) const;
};

/// Graph + exchange for one variant (no FL): proposed discovers the graph,
/// uniform samples one, non-iid does nothing.
VariantOutcome run_variant_exchange(const ExperimentConfig& cfg, const PreparedExperiment& prep,
                                    const std::string& variant);

struct MetricsBundle {
    ExperimentConfig cfg;
    uint64_t hash = 0;
    double beta = 0.0;
    double lambda_pre_mean = 0.0;
    std::optional<double> lambda_post_mean;
    std::optional<double> link_pfail_rl_mean;
    std::optional<double> link_pfail_uniform_mean;
    std::vector<VariantOutcome> variants;
    std::vector<std::string> files;  // relative to output_dir
    std::string output_dir;
};

/// Full run: prepare, per-variant graph/exchange, FL per scheme, metric
/// emission. Byte-identical outputs under identical config + seed.
MetricsBundle run_pipeline(const ExperimentConfig& cfg);

/// Graph-discovery stages only (CLI `graph` subcommand): prepare, discover,
/// exchange, heatmaps and link quality, no FL.
MetricsBundle run_graph_stage(const ExperimentConfig& cfg);

Graph sample_uniform_graph(int n_clients, Rng& rng);

/// Writes lambda_pre.csv / lambda_post.csv / lambda_summary.csv; returns
/// the off-diagonal means (pre, post).
std::pair<double, double> emit_heatmap_data(const Eigen::MatrixXi& lambda_pre,
                                            const Eigen::MatrixXi& lambda_post,
                                            const std::string& dir, const std::string& header);

/// Writes link_quality.csv / link_quality_summary.csv; returns the mean
/// P_D of RL links and of the pooled uniform links.
std::pair<double, double> emit_link_quality(const Graph& graph_rl,
                                            const std::vector<Graph>& graphs_uniform,
                                            const Matrix& p_fail, const std::string& dir,
                                            const std::string& header);

struct SweepCell {
    std::string variant;
    Scheme scheme = Scheme::fedavg;
    int straggler_count = 0;
    double final_loss = 0.0;
};

struct SweepTable {
    std::vector<SweepCell> cells;
    double cell(const std::string& variant, Scheme scheme, int count) const;
};

/// Final global loss per (variant, scheme, straggler count). Graph and
/// exchange run once per variant; the counts only change the FL stage.
SweepTable straggler_sweep(const ExperimentConfig& cfg, const std::vector<int>& counts);

/// Config output_dir unless FEDLINK_OUTPUT_DIR is set.
std::string resolve_output_dir(const ExperimentConfig& cfg);

/// "# fedlink v<version> config_hash=<hex> seed=<dec>" metric-file header.
std::string metrics_header(const ExperimentConfig& cfg);

}  // namespace fedlink
