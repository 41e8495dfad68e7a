#pragma once

#include <vector>

#include "fedlink/datastore.hpp"

namespace fedlink {

/// First and second moments of a local shard. Clients share these, never
/// raw points, so a common PCA basis can be fit server-side.
struct MomentStats {
    long count = 0;
    Vector sum;        // d
    Matrix sum_outer;  // d x d, sum of x x^T
};

/// Shared projection basis. All clients project with the same basis so
/// centroid distances are comparable across clients; `fingerprint`
/// identifies the basis and is checked before any cross-client distance.
struct PcaBasis {
    Vector mean;                 // d
    Matrix components;           // q x d, rows orthonormal
    Vector explained_variance;   // q, non-increasing
    uint64_t fingerprint = 0;

    int dim() const { return static_cast<int>(components.cols()); }
    int n_components() const { return static_cast<int>(components.rows()); }
};

/// Per-client K-means++ result in the shared projected space.
struct ClusterModel {
    int client_id = 0;
    Matrix centroids;             // k x q
    std::vector<int> assignments;
    double wcss = 0.0;
    uint64_t basis_fingerprint = 0;
    int lloyd_iterations = 0;
};

struct LloydResult {
    Matrix centroids;
    std::vector<int> assignments;
    double wcss = 0.0;
};

MomentStats local_moments(const LocalDataset& ld);

/// Pools client moments into a global covariance and takes the top-q
/// eigenvectors. Sign convention: each component's largest-magnitude entry
/// is made positive, so the basis is deterministic.
PcaBasis fit_shared_pca(const std::vector<MomentStats>& stats, int q);

/// (x - mean) * components^T for every row.
Matrix project(const PcaBasis& basis, const Matrix& points);

/// D^2-weighted seeding: first centroid uniform, each next one drawn with
/// probability proportional to squared distance to the nearest chosen
/// centroid. Falls back to uniform when all remaining D^2 are zero.
Matrix kmeanspp_init(const Matrix& X, int k, uint64_t seed);

/// One Lloyd step: assign to nearest centroid (ties -> lowest index),
/// recompute means (empty cluster keeps its centroid). Returned WCSS is
/// measured against the updated centroids, so it never increases across
/// successive calls.
LloydResult lloyd_iterate(const Matrix& X, const Matrix& centroids);

/// K-means++ then Lloyd until the WCSS improvement drops below tol or
/// max_iters is hit; writes assignments back into `ld`. With restarts > 1
/// the whole procedure reruns under derived seeds and the lowest-WCSS
/// solution wins.
ClusterModel cluster_local(LocalDataset& ld, const PcaBasis& basis, uint64_t seed,
                           int max_iters = 50, double tol = 1e-9, int restarts = 1);

}  // namespace fedlink
