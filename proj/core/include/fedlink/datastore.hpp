#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "fedlink/common.hpp"

namespace fedlink {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Full dataset: feature rows scaled to [0,1] plus ground-truth labels.
/// Labels are quarantined behind labels_for_eval(); the training path
/// never reads them. They feed partitioning and the linear probe only.
class Dataset {
public:
    Dataset(Matrix points, std::vector<int> labels, int n_classes, std::string name);

    const Matrix& points() const { return points_; }
    int n() const { return static_cast<int>(points_.rows()); }
    int dim() const { return static_cast<int>(points_.cols()); }
    int n_classes() const { return n_classes_; }
    const std::string& name() const { return name_; }

    // Evaluation-only. Partitioning and linear-probe code are the sole callers.
    const std::vector<int>& labels_for_eval() const { return labels_; }

private:
    Matrix points_;
    std::vector<int> labels_;
    int n_classes_ = 0;
    std::string name_;
};

/// One client's local shard. Cluster assignments are filled by the
/// embedding stage; suspected_clusters starts at the declared k_i and
/// grows as foreign clusters are accepted during exchange.
class LocalDataset {
public:
    struct Provenance {
        int from_client = -1;   // -1 for native points
        int from_cluster = -1;
    };

    LocalDataset(int client_id, Matrix points, std::vector<int> labels, int k);

    int client_id() const { return client_id_; }
    const Matrix& points() const { return points_; }
    int n() const { return static_cast<int>(points_.rows()); }
    int dim() const { return static_cast<int>(points_.cols()); }

    int suspected_clusters() const { return k_; }
    void set_suspected_clusters(int k);

    bool has_assignments() const { return !assignments_.empty(); }
    const std::vector<int>& cluster_assignments() const;
    void set_cluster_assignments(std::vector<int> assignments);

    const std::vector<Provenance>& provenance() const { return provenance_; }

    // Evaluation-only accessor, same quarantine as Dataset.
    const std::vector<int>& labels_for_eval() const { return labels_; }

    // Exchange plumbing. Appending invalidates cluster assignments; removal
    // (move-mode sender) keeps labels/provenance/assignments aligned.
    void append_points(const Matrix& pts, const std::vector<int>& labels, const Provenance& tag);
    void remove_points(const std::vector<int>& sorted_row_indices);

private:
    int client_id_ = 0;
    Matrix points_;
    std::vector<int> labels_;
    std::vector<Provenance> provenance_;
    std::vector<int> assignments_;
    int k_ = 1;
};

/// Transmitter-owned permission table over (receiver, local cluster).
struct TrustMatrix {
    int owner = 0;
    Eigen::MatrixXi entries;  // N x k_owner, values in {0,1}; row `owner` fixed to 0

    int receivers() const { return static_cast<int>(entries.rows()); }
    int clusters() const { return static_cast<int>(entries.cols()); }
    bool permits(int receiver, int cluster) const { return entries(receiver, cluster) == 1; }
};

enum class LabelLayout { circular, random };

struct PartitionSpec {
    int n_clients = 10;
    int classes_per_client = 3;
    uint64_t seed = 0;
    LabelLayout layout = LabelLayout::circular;
};

struct TrustPolicy {
    enum class Kind { full, bernoulli, deny_list } kind = Kind::full;
    double p = 1.0;                                 // bernoulli only
    std::vector<std::pair<int, int>> denied;        // deny_list: (receiver, cluster)
};

/// Source descriptor for load_dataset. Exactly one format is active.
struct DataSource {
    enum class Format { idx_images, cifar10_binary, synthetic_gmm } format = Format::synthetic_gmm;

    // idx_images
    std::string images_path;
    std::string labels_path;

    // cifar10_binary
    std::vector<std::string> batch_paths;

    // synthetic_gmm
    enum class MeanLayout { random, orthogonal } mean_layout = MeanLayout::random;
    int classes = 4;
    int dim = 16;
    int per_class = 50;
    double sigma = 0.05;
    std::optional<Matrix> means;  // classes x dim; overrides mean_layout
    uint64_t seed = 0;

    std::string name = "dataset";
};

Dataset load_dataset(const DataSource& source);

/// Splits points over clients so each holds only its assigned label set.
/// Circular layout gives client i labels {i-1, i, i+1} mod n_classes (and
/// the analogous window for other classes_per_client). Per-client sizes are
/// equalized by subsampling; dropped points are excluded from the drawn
/// subset entirely, never duplicated.
std::vector<LocalDataset> partition_noniid(const Dataset& ds, const PartitionSpec& spec);

/// The label window assigned to one client under a layout (exposed for tests).
std::vector<int> circular_label_set(int client, int n_classes, int classes_per_client);

TrustMatrix build_trust_matrix(int owner, int n_clients, int k_owner,
                               const TrustPolicy& policy, uint64_t seed);

/// Number of clusters whose population strictly exceeds `threshold`.
int diversity(const LocalDataset& ld, int threshold);

}  // namespace fedlink
