#include "fedlink/embedding.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>

namespace fedlink {

MomentStats local_moments(const LocalDataset& ld) {
    if (ld.n() == 0) throw argument_error("local_moments: empty dataset");
    MomentStats s;
    s.count = ld.n();
    s.sum = ld.points().colwise().sum().transpose();
    s.sum_outer = ld.points().transpose() * ld.points();
    return s;
}

PcaBasis fit_shared_pca(const std::vector<MomentStats>& stats, int q) {
    if (q < 1) throw argument_error("fit_shared_pca: q must be >= 1");
    if (stats.empty()) throw argument_error("fit_shared_pca: no moment statistics");

    const Eigen::Index d = stats.front().sum.size();
    long n = 0;
    Vector sum = Vector::Zero(d);
    Matrix outer = Matrix::Zero(d, d);
    for (const auto& s : stats) {
        if (s.sum.size() != d || s.sum_outer.rows() != d || s.sum_outer.cols() != d) {
            throw argument_error("fit_shared_pca: inconsistent moment dimensions");
        }
        n += s.count;
        sum += s.sum;
        outer += s.sum_outer;
    }
    if (n <= q) throw argument_error("fit_shared_pca: need more samples than components");
    if (q > d) throw argument_error("fit_shared_pca: q exceeds feature dimension");

    const Vector mean = sum / double(n);
    Matrix cov = outer / double(n) - mean * mean.transpose();
    cov = 0.5 * (cov + cov.transpose());  // keep it exactly symmetric
    if (!cov.allFinite()) throw numeric_error("fit_shared_pca: covariance not finite");

    Eigen::SelfAdjointEigenSolver<Matrix> solver(cov);
    if (solver.info() != Eigen::Success) throw numeric_error("fit_shared_pca: eigensolver failed");

    // Eigen returns ascending eigenvalues; take the top q, largest first.
    PcaBasis basis;
    basis.mean = mean;
    basis.components.resize(q, d);
    basis.explained_variance.resize(q);
    for (int c = 0; c < q; ++c) {
        const Eigen::Index src = d - 1 - c;
        Vector v = solver.eigenvectors().col(src);
        Eigen::Index argmax = 0;
        v.cwiseAbs().maxCoeff(&argmax);
        if (v(argmax) < 0) v = -v;
        basis.components.row(c) = v.transpose();
        basis.explained_variance(c) = solver.eigenvalues()(src);
    }

    uint64_t h = fnv1a_64(basis.mean.data(), sizeof(double) * size_t(d));
    h = fnv1a_64(basis.components.data(), sizeof(double) * size_t(q) * size_t(d), h);
    basis.fingerprint = h;
    return basis;
}

Matrix project(const PcaBasis& basis, const Matrix& points) {
    if (points.cols() != basis.dim()) {
        throw argument_error("project: point dimension does not match basis");
    }
    return (points.rowwise() - basis.mean.transpose()) * basis.components.transpose();
}

Matrix kmeanspp_init(const Matrix& X, int k, uint64_t seed) {
    const Eigen::Index n = X.rows();
    if (k < 1) throw argument_error("kmeanspp_init: k must be >= 1");
    if (k > n) throw argument_error("kmeanspp_init: k exceeds point count");

    Rng rng(seed);
    Matrix centroids(k, X.cols());

    std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
    centroids.row(0) = X.row(first(rng));

    Vector d2 = (X.rowwise() - centroids.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < k; ++c) {
        const double total = d2.sum();
        Eigen::Index chosen = 0;
        if (total > 0.0) {
            std::uniform_real_distribution<double> u(0.0, total);
            double target = u(rng);
            double acc = 0.0;
            chosen = n - 1;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += d2(i);
                if (target < acc) {
                    chosen = i;
                    break;
                }
            }
        } else {
            // all points coincide with chosen centroids; any point works
            std::uniform_int_distribution<Eigen::Index> any(0, n - 1);
            chosen = any(rng);
        }
        centroids.row(c) = X.row(chosen);
        d2 = d2.cwiseMin((X.rowwise() - centroids.row(c)).rowwise().squaredNorm());
    }
    return centroids;
}

LloydResult lloyd_iterate(const Matrix& X, const Matrix& centroids) {
    const Eigen::Index n = X.rows();
    const Eigen::Index k = centroids.rows();
    if (k < 1) throw argument_error("lloyd_iterate: no centroids");

    LloydResult res;
    res.assignments.resize(static_cast<size_t>(n));
    std::vector<long> counts(static_cast<size_t>(k), 0);
    Matrix sums = Matrix::Zero(k, X.cols());

    for (Eigen::Index i = 0; i < n; ++i) {
        int best = 0;
        double best_d = (X.row(i) - centroids.row(0)).squaredNorm();
        for (Eigen::Index c = 1; c < k; ++c) {
            const double d = (X.row(i) - centroids.row(c)).squaredNorm();
            if (d < best_d) {  // strict: ties keep the lower index
                best_d = d;
                best = static_cast<int>(c);
            }
        }
        res.assignments[static_cast<size_t>(i)] = best;
        counts[static_cast<size_t>(best)]++;
        sums.row(best) += X.row(i);
    }

    res.centroids = centroids;
    for (Eigen::Index c = 0; c < k; ++c) {
        if (counts[static_cast<size_t>(c)] > 0) {
            res.centroids.row(c) = sums.row(c) / double(counts[static_cast<size_t>(c)]);
        }
        // empty cluster keeps its previous centroid
    }

    res.wcss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        res.wcss += (X.row(i) - res.centroids.row(res.assignments[static_cast<size_t>(i)])).squaredNorm();
    }
    return res;
}

namespace {

struct KmeansRun {
    Matrix centroids;
    std::vector<int> assignments;
    double wcss = std::numeric_limits<double>::infinity();
    int iterations = 0;
};

KmeansRun run_kmeans(const Matrix& X, int k, uint64_t seed, int max_iters, double tol) {
    Matrix centroids = kmeanspp_init(X, k, seed);

    // WCSS of the seeding, so the first iteration's improvement is defined.
    double prev = 0.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index c = 0; c < k; ++c) {
            best = std::min(best, (X.row(i) - centroids.row(c)).squaredNorm());
        }
        prev += best;
    }

    LloydResult step;
    int iters = 0;
    while (iters < max_iters) {
        step = lloyd_iterate(X, centroids);
        ++iters;
        centroids = step.centroids;
        if (prev - step.wcss < tol) break;
        prev = step.wcss;
    }

    KmeansRun run;
    run.centroids = std::move(centroids);
    run.assignments = std::move(step.assignments);
    run.wcss = step.wcss;
    run.iterations = iters;
    return run;
}

}  // namespace

ClusterModel cluster_local(LocalDataset& ld, const PcaBasis& basis, uint64_t seed,
                           int max_iters, double tol, int restarts) {
    const int k = ld.suspected_clusters();
    if (k > ld.n()) throw argument_error("cluster_local: k exceeds local point count");
    if (max_iters < 1) throw argument_error("cluster_local: max_iters must be >= 1");
    if (restarts < 1) throw argument_error("cluster_local: restarts must be >= 1");

    const Matrix X = project(basis, ld.points());
    KmeansRun best;
    for (int r = 0; r < restarts; ++r) {
        const uint64_t run_seed = r == 0 ? seed : derive_seed(seed, "kmeans-restart", uint64_t(r));
        KmeansRun run = run_kmeans(X, k, run_seed, max_iters, tol);
        if (run.wcss < best.wcss) best = std::move(run);
    }

    ClusterModel model;
    model.client_id = ld.client_id();
    model.centroids = std::move(best.centroids);
    model.assignments = std::move(best.assignments);
    model.wcss = best.wcss;
    model.basis_fingerprint = basis.fingerprint;
    model.lloyd_iterations = best.iterations;
    ld.set_cluster_assignments(model.assignments);
    return model;
}

}  // namespace fedlink
