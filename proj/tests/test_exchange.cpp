#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "fedlink/exchange.hpp"

using namespace fedlink;

namespace {

// Two-blob world: client 0 lives near 0.1, client 1 near 0.9.
Matrix blob(int n, int d, double center, uint64_t seed, double spread = 0.02) {
    Rng rng(seed);
    std::normal_distribution<double> noise(0.0, spread);
    Matrix pts(n, d);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) pts(i, j) = std::clamp(center + noise(rng), 0.0, 1.0);
    }
    return pts;
}

LocalDataset single_cluster_client(int id, const Matrix& pts) {
    LocalDataset ld(id, pts, std::vector<int>(static_cast<size_t>(pts.rows()), 0), 1);
    ld.set_cluster_assignments(std::vector<int>(static_cast<size_t>(pts.rows()), 0));
    return ld;
}

Model train_on(const Matrix& data, int steps, double eta, uint64_t seed) {
    Model m = init_model({4, 8, 2, 8, 4}, Activation::relu, seed);
    for (int i = 0; i < steps; ++i) m = sgd_step(m, data, eta);
    return m;
}

TrustMatrix full_trust(int owner, int n, int k) {
    return build_trust_matrix(owner, n, k, TrustPolicy{}, 0);
}

}  // namespace

TEST_CASE("pretrain with zero learning rate reports the initial loss") {
    Matrix pts = blob(30, 4, 0.4, 1);
    LocalDataset ld = single_cluster_client(0, pts);
    Model m = init_model({4, 3, 4}, Activation::sigmoid, 2);
    auto [trained, baseline] = pretrain_baseline(m, ld, 0.0);
    CHECK(trained.params == m.params);
    const double expected = mse_loss(forward(m, pts).reconstruction, pts) / pts.rows();
    CHECK(baseline.value == doctest::Approx(expected));
    CHECK(baseline.client == 0);
}

TEST_CASE("pretrain baseline is finite, nonnegative and deterministic") {
    Matrix pts = blob(25, 4, 0.6, 5);
    LocalDataset ld = single_cluster_client(3, pts);
    Model m = init_model({4, 3, 4}, Activation::sigmoid, 9);
    auto [t1, b1] = pretrain_baseline(m, ld, 0.5);
    auto [t2, b2] = pretrain_baseline(m, ld, 0.5);
    CHECK(b1.value >= 0.0);
    CHECK(std::isfinite(b1.value));
    CHECK(b1.value == b2.value);
    CHECK(t1.params == t2.params);
}

TEST_CASE("reserve selection respects trust, size saturation and seeding") {
    Matrix pts = blob(12, 4, 0.5, 3);
    LocalDataset ld = single_cluster_client(1, pts);

    Reserve whole = select_reserve(ld, 0, 1, 100, 7);
    CHECK(whole.indices.size() == 12);  // size >= population takes the cluster

    Reserve a = select_reserve(ld, 0, 1, 5, 7);
    Reserve b = select_reserve(ld, 0, 1, 5, 7);
    CHECK(a.indices == b.indices);
    CHECK(a.points.rows() == 5);
    std::set<int> unique(a.indices.begin(), a.indices.end());
    CHECK(unique.size() == 5);  // without replacement

    CHECK_THROWS_AS(select_reserve(ld, 0, 0, 5, 7), permission_error);
}

TEST_CASE("benefit test accepts foreign blobs and rejects own data") {
    Matrix own = blob(60, 4, 0.1, 11);
    Matrix foreign = blob(20, 4, 0.9, 12);
    Model converged = train_on(own, 400, 0.5, 13);
    const double own_loss = mse_loss(forward(converged, own).reconstruction, own) / own.rows();
    BaselineLoss baseline{0, own_loss};

    // whole-dataset reserve: exactly equal, never strictly greater
    CHECK_FALSE(benefit_test(converged, baseline, own));
    // seeded subsample of own training data: comparable loss, no strict excess
    Matrix half = own.topRows(30);
    CHECK(mse_loss(forward(converged, half).reconstruction, half) / 30.0 <= own_loss * 1.5);
    // a far blob reconstructs terribly and passes
    CHECK(benefit_test(converged, baseline, foreign));

    CHECK_THROWS_AS(benefit_test(converged, baseline, Matrix(0, 4)), argument_error);
}

namespace {

struct TwoClientWorld {
    std::vector<LocalDataset> datasets;
    std::vector<Model> models;
    std::vector<BaselineLoss> baselines;
    std::vector<TrustMatrix> trust;
    Graph graph;
    std::vector<ExchangePlan> plans;
};

TwoClientWorld make_world(int transfer_count, TransferMode mode, bool trusted = true) {
    TwoClientWorld w;
    w.datasets.push_back(single_cluster_client(0, blob(50, 4, 0.1, 21)));
    w.datasets.push_back(single_cluster_client(1, blob(50, 4, 0.9, 22)));
    for (int i = 0; i < 2; ++i) {
        auto [m, b] = pretrain_baseline(train_on(w.datasets[size_t(i)].points(), 200, 0.5, 30 + i),
                                        w.datasets[size_t(i)], 0.5);
        w.models.push_back(std::move(m));
        w.baselines.push_back(b);
    }
    for (int i = 0; i < 2; ++i) {
        TrustMatrix tm = full_trust(i, 2, 1);
        if (!trusted) tm.entries.setZero();
        w.trust.push_back(tm);
    }
    w.graph.edges = {{1, 0}};  // client 1 transmits to client 0
    ExchangePlan plan;
    plan.link = w.graph.edges[0];
    plan.eligible_clusters = trusted ? std::vector<int>{0} : std::vector<int>{};
    plan.reserve_size = 10;
    plan.transfer_count = transfer_count;
    plan.mode = mode;
    plan.diversity_threshold = 10;
    w.plans.push_back(plan);
    return w;
}

}  // namespace

TEST_CASE("empty graph leaves datasets untouched") {
    TwoClientWorld w = make_world(20, TransferMode::copy);
    Graph empty;
    auto report = execute_exchange(empty, {}, w.models, w.baselines, w.trust, w.datasets, 5);
    CHECK(report.rows.empty());
    CHECK(w.datasets[0].n() == 50);
    CHECK(w.datasets[1].n() == 50);
}

TEST_CASE("rejected benefit test leaves datasets unchanged and is reported") {
    // receiver's model trained on the transmitter's blob: reserve looks familiar
    TwoClientWorld w = make_world(20, TransferMode::copy);
    w.models[0] = train_on(w.datasets[1].points(), 200, 0.5, 77);
    w.baselines[0].value = 10.0;  // astronomically lenient baseline
    auto report = execute_exchange(w.graph, w.plans, w.models, w.baselines, w.trust, w.datasets, 5);
    REQUIRE(report.rows.size() == 1);
    CHECK(report.rows[0].eligible == 1);
    CHECK(report.rows[0].benefit_pass == 0);
    CHECK(report.rows[0].points_moved == 0);
    CHECK(w.datasets[0].n() == 50);
    CHECK(w.datasets[0].suspected_clusters() == 1);
}

TEST_CASE("copy-mode exchange moves exactly transfer_count foreign points") {
    TwoClientWorld w = make_world(20, TransferMode::copy);
    const Matrix sender_before = w.datasets[1].points();
    auto report = execute_exchange(w.graph, w.plans, w.models, w.baselines, w.trust, w.datasets, 5);
    REQUIRE(report.rows.size() == 1);
    CHECK(report.rows[0].benefit_pass == 1);
    CHECK(report.rows[0].points_moved == 20);
    CHECK(report.total_moved() == 20);
    CHECK(w.datasets[0].n() == 70);
    CHECK(w.datasets[0].suspected_clusters() == 2);  // one accepted foreign cluster

    // sender bitwise unchanged in copy mode
    CHECK(w.datasets[1].points() == sender_before);
    CHECK(w.datasets[1].n() == 50);

    // transferred points carry provenance and come from the foreign blob
    int tagged = 0;
    for (int r = 0; r < w.datasets[0].n(); ++r) {
        const auto& tag = w.datasets[0].provenance()[static_cast<size_t>(r)];
        if (tag.from_client == 1) {
            ++tagged;
            CHECK(w.datasets[0].points()(r, 0) > 0.5);
        }
    }
    CHECK(tagged == 20);
    CHECK(audit_trust_violations(w.datasets, w.trust) == 0);
}

TEST_CASE("transfers prefer points outside the reserve") {
    TwoClientWorld w = make_world(30, TransferMode::copy);
    // reserve 10 + transfer 30 <= 50: the two samples can stay disjoint
    auto report = execute_exchange(w.graph, w.plans, w.models, w.baselines, w.trust, w.datasets, 9);
    CHECK(report.rows[0].points_moved == 30);

    Reserve reserve = select_reserve(w.datasets[1], 0, 1, 10,
                                     derive_seed(9, "exchange-edge", 0));
    std::set<int> reserve_rows(reserve.indices.begin(), reserve.indices.end());
    // recover moved rows by matching appended points against sender rows
    for (int r = 50; r < w.datasets[0].n(); ++r) {
        for (int s = 0; s < w.datasets[1].n(); ++s) {
            if ((w.datasets[0].points().row(r) - w.datasets[1].points().row(s)).norm() == 0.0) {
                CHECK(reserve_rows.count(s) == 0);
            }
        }
    }
}

TEST_CASE("move mode preserves sender diversity at the configured threshold") {
    TwoClientWorld w = make_world(45, TransferMode::move);
    const int before = diversity(w.datasets[1], 10);
    auto report = execute_exchange(w.graph, w.plans, w.models, w.baselines, w.trust, w.datasets, 3);
    // cap: population 50, threshold 10 -> at most 39 may leave
    CHECK(report.rows[0].points_moved == 39);
    CHECK(w.datasets[1].n() == 11);
    CHECK(diversity(w.datasets[1], 10) == before);
    CHECK(w.datasets[0].n() == 50 + 39);
}

TEST_CASE("a plan naming an untrusted cluster is refused") {
    TwoClientWorld w = make_world(20, TransferMode::copy);
    w.trust[1].entries.setZero();  // stale plan still lists cluster 0
    CHECK_THROWS_AS(
        execute_exchange(w.graph, w.plans, w.models, w.baselines, w.trust, w.datasets, 5),
        permission_error);
}

TEST_CASE("trust audit flags points that violate the current trust matrix") {
    TwoClientWorld w = make_world(20, TransferMode::copy);
    execute_exchange(w.graph, w.plans, w.models, w.baselines, w.trust, w.datasets, 5);
    CHECK(audit_trust_violations(w.datasets, w.trust) == 0);
    w.trust[1].entries.setZero();  // retroactively revoke
    CHECK(audit_trust_violations(w.datasets, w.trust) == 20);
}

TEST_CASE("exchange is deterministic under seed") {
    TwoClientWorld a = make_world(15, TransferMode::copy);
    TwoClientWorld b = make_world(15, TransferMode::copy);
    execute_exchange(a.graph, a.plans, a.models, a.baselines, a.trust, a.datasets, 123);
    execute_exchange(b.graph, b.plans, b.models, b.baselines, b.trust, b.datasets, 123);
    CHECK(a.datasets[0].points() == b.datasets[0].points());
}

TEST_CASE("post-exchange dissimilarity does not increase on a constructed instance") {
    // three clients, three far blobs, full trust, complete exchange cycle
    std::vector<LocalDataset> datasets;
    datasets.push_back(single_cluster_client(0, blob(60, 4, 0.1, 41)));
    datasets.push_back(single_cluster_client(1, blob(60, 4, 0.5, 42)));
    datasets.push_back(single_cluster_client(2, blob(60, 4, 0.9, 43)));

    std::vector<MomentStats> moments;
    for (auto& ld : datasets) moments.push_back(local_moments(ld));
    PcaBasis basis = fit_shared_pca(moments, 2);

    std::vector<ClusterModel> pre_models;
    std::vector<TrustMatrix> trust;
    for (auto& ld : datasets) {
        pre_models.push_back(cluster_local(ld, basis, 100 + ld.client_id()));
        trust.push_back(full_trust(ld.client_id(), 3, 1));
    }
    const double beta = 0.5;
    DissimilarityReport pre = compute_dissimilarity(pre_models, trust, beta);

    Graph ring;
    ring.edges = {{1, 0}, {2, 1}, {0, 2}};
    std::vector<Model> models;
    std::vector<BaselineLoss> baselines;
    for (auto& ld : datasets) {
        auto [m, b] = pretrain_baseline(train_on(ld.points(), 150, 0.5, ld.client_id()), ld, 0.5);
        models.push_back(std::move(m));
        baselines.push_back(b);
    }
    std::vector<ExchangePlan> plans;
    for (const auto& e : ring.edges) {
        ExchangePlan p;
        p.link = e;
        p.eligible_clusters =
            pre.detail[static_cast<size_t>(e.receiver)][static_cast<size_t>(e.transmitter)].eligible;
        p.reserve_size = 10;
        p.transfer_count = 30;
        plans.push_back(p);
    }
    execute_exchange(ring, plans, models, baselines, trust, datasets, 77);

    std::vector<ClusterModel> post_models;
    std::vector<TrustMatrix> post_trust;
    for (auto& ld : datasets) {
        post_models.push_back(cluster_local(ld, basis, 200 + ld.client_id()));
        post_trust.push_back(full_trust(ld.client_id(), 3, ld.suspected_clusters()));
    }
    DissimilarityReport post = compute_dissimilarity(post_models, post_trust, beta);
    CHECK(post.offdiag_mean() <= pre.offdiag_mean());
}
