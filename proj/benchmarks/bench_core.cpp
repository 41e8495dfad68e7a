#include <benchmark/benchmark.h>

#include "fedlink/pipeline.hpp"

using namespace fedlink;

namespace {

Matrix random_points(int n, int d, uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix pts(n, d);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) pts(i, j) = u(rng);
    }
    return pts;
}

void BM_SgdStep(benchmark::State& state) {
    Model m = init_model({16, 128, 4, 128, 16}, Activation::relu, 1);
    Matrix batch = random_points(static_cast<int>(state.range(0)), 16, 2);
    for (auto _ : state) {
        m = sgd_step(m, batch, 0.1);
        benchmark::DoNotOptimize(m.params.data());
    }
}
BENCHMARK(BM_SgdStep)->Arg(32)->Arg(128);

void BM_LloydIterate(benchmark::State& state) {
    Matrix pts = random_points(static_cast<int>(state.range(0)), 16, 3);
    Matrix centroids = kmeanspp_init(pts, 3, 4);
    for (auto _ : state) {
        LloydResult res = lloyd_iterate(pts, centroids);
        benchmark::DoNotOptimize(res.wcss);
    }
}
BENCHMARK(BM_LloydIterate)->Arg(300)->Arg(3000);

void BM_FitSharedPca(benchmark::State& state) {
    const int d = static_cast<int>(state.range(0));
    Matrix pts = random_points(500, d, 5);
    MomentStats stats;
    stats.count = pts.rows();
    stats.sum = pts.colwise().sum().transpose();
    stats.sum_outer = pts.transpose() * pts;
    for (auto _ : state) {
        PcaBasis basis = fit_shared_pca({stats}, std::min(16, d));
        benchmark::DoNotOptimize(basis.fingerprint);
    }
}
BENCHMARK(BM_FitSharedPca)->Arg(16)->Arg(256);

void BM_QUpdate(benchmark::State& state) {
    Rng rng(6);
    std::uniform_int_distribution<int> action(1, 9);
    std::uniform_real_distribution<double> reward(-1.0, 2.0);
    for (auto _ : state) {
        QState qs = make_qstate(0, 10, 90);
        for (int i = 0; i < 90; ++i) buffer_push(qs, action(rng), reward(rng));
        q_update(qs);
        benchmark::DoNotOptimize(qs.q.data());
    }
}
BENCHMARK(BM_QUpdate);

void BM_DiscoverGraph(benchmark::State& state) {
    const int n = 10;
    std::vector<ClusterModel> models;
    std::vector<TrustMatrix> trust;
    Rng rng(7);
    std::uniform_real_distribution<double> coord(0.0, 4.0);
    for (int i = 0; i < n; ++i) {
        ClusterModel m;
        m.client_id = i;
        m.centroids = Matrix(3, 2);
        for (int c = 0; c < 3; ++c) m.centroids.row(c) << coord(rng), coord(rng);
        m.basis_fingerprint = 1;
        models.push_back(std::move(m));
        trust.push_back(build_trust_matrix(i, n, 3, TrustPolicy{}, 0));
    }
    ChannelParams chan;
    chan.side = 5.0;
    chan.seed = 8;
    RssMatrix rss = generate_rss(chan, n);
    Matrix p_fail = failure_probability(rss, chan.rate, chan.noise_power);
    RewardParams params;
    params.beta = 1.0;
    params.gamma.t_anneal = 6.0;
    uint64_t seed = 0;
    for (auto _ : state) {
        DiscoveryResult res = discover_graph(models, trust, p_fail, params, 600, 90, seed++);
        benchmark::DoNotOptimize(res.graph.edges.data());
    }
}
BENCHMARK(BM_DiscoverGraph);

}  // namespace

BENCHMARK_MAIN();
