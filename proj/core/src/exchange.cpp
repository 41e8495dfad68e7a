#include "fedlink/exchange.hpp"

#include <algorithm>
#include <numeric>

namespace fedlink {

std::pair<Model, BaselineLoss> pretrain_baseline(const Model& m, const LocalDataset& ld, double eta) {
    Model trained = sgd_step(m, ld.points(), eta);
    const double loss = mse_loss(forward(trained, ld.points()).reconstruction, ld.points());
    return {std::move(trained), BaselineLoss{ld.client_id(), loss / double(ld.n())}};
}

namespace {

std::vector<int> cluster_rows(const LocalDataset& ld, int cluster) {
    const auto& assign = ld.cluster_assignments();
    std::vector<int> rows;
    for (size_t i = 0; i < assign.size(); ++i) {
        if (assign[i] == cluster) rows.push_back(static_cast<int>(i));
    }
    return rows;
}

std::vector<int> sample_without_replacement(std::vector<int> pool, int count, Rng& rng) {
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(std::min<size_t>(pool.size(), static_cast<size_t>(count)));
    std::sort(pool.begin(), pool.end());
    return pool;
}

Matrix gather_rows(const Matrix& src, const std::vector<int>& rows) {
    Matrix out(rows.size(), src.cols());
    for (size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = src.row(rows[r]);
    return out;
}

}  // namespace

Reserve select_reserve(const LocalDataset& transmitter, int cluster, int trust_entry, int size,
                       uint64_t seed) {
    if (trust_entry != 1) {
        throw permission_error("select_reserve: cluster " + std::to_string(cluster) +
                               " of client " + std::to_string(transmitter.client_id()) +
                               " is not shared with this receiver");
    }
    if (size < 1) throw argument_error("select_reserve: size must be >= 1");

    std::vector<int> rows = cluster_rows(transmitter, cluster);
    if (rows.empty()) throw argument_error("select_reserve: cluster is empty");

    Rng rng(seed);
    Reserve res;
    res.indices = sample_without_replacement(std::move(rows), size, rng);
    res.points = gather_rows(transmitter.points(), res.indices);
    return res;
}

bool benefit_test(const Model& receiver_model, const BaselineLoss& baseline, const Matrix& reserve_points) {
    if (reserve_points.rows() < 1) throw argument_error("benefit_test: empty reserve");
    const double reserve_loss =
        mse_loss(forward(receiver_model, reserve_points).reconstruction, reserve_points) /
        double(reserve_points.rows());
    return reserve_loss > baseline.value;
}

int ExchangeReport::total_moved() const {
    int n = 0;
    for (const auto& r : rows) n += r.points_moved;
    return n;
}

ExchangeReport execute_exchange(const Graph& graph, const std::vector<ExchangePlan>& plans,
                                const std::vector<Model>& receiver_models,
                                const std::vector<BaselineLoss>& baselines,
                                const std::vector<TrustMatrix>& trust,
                                std::vector<LocalDataset>& datasets, uint64_t seed) {
    const int n = static_cast<int>(datasets.size());
    validate_graph(graph, n);
    if (plans.size() != graph.edges.size()) {
        throw argument_error("execute_exchange: one plan per edge required");
    }
    if (static_cast<int>(receiver_models.size()) != n || static_cast<int>(baselines.size()) != n ||
        static_cast<int>(trust.size()) != n) {
        throw argument_error("execute_exchange: models, baselines and trust must cover every client");
    }

    // Exchanges are simultaneous over the final graph: every decision and
    // sample resolves against the pre-exchange data. Phase 1 is read-only;
    // phase 2 applies the appends (and removals in move mode).
    struct PendingTransfer {
        int receiver;
        int transmitter;
        int cluster;
        std::vector<int> rows;  // pre-exchange row indices in the sender
        Matrix points;
        std::vector<int> labels;
    };
    std::vector<PendingTransfer> pending;
    std::vector<std::vector<int>> claimed(static_cast<size_t>(n));   // move mode: rows already spoken for
    std::vector<int> accepted(static_cast<size_t>(n), 0);

    ExchangeReport report;
    for (size_t p = 0; p < plans.size(); ++p) {
        const auto& plan = plans[p];
        const int recv = plan.link.receiver;
        const int trans = plan.link.transmitter;
        if (recv != graph.edges[p].receiver || trans != graph.edges[p].transmitter) {
            throw argument_error("execute_exchange: plan does not match its edge");
        }

        const auto& sender = datasets[static_cast<size_t>(trans)];
        const auto& tm = trust[static_cast<size_t>(trans)];
        auto& sender_claimed = claimed[static_cast<size_t>(trans)];

        const int k_j = sender.suspected_clusters();
        for (int m = 0; m < k_j; ++m) {
            const bool eligible =
                std::find(plan.eligible_clusters.begin(), plan.eligible_clusters.end(), m) !=
                plan.eligible_clusters.end();
            ExchangeReport::Row row{recv, trans, m, eligible ? 1 : 0, 0, 0};
            if (!eligible) {
                report.rows.push_back(row);
                continue;
            }
            if (!tm.permits(recv, m)) {
                // eligible sets are trust-gated upstream; a mismatch means the plan is stale
                throw permission_error("execute_exchange: plan names cluster " + std::to_string(m) +
                                       " that trust does not permit");
            }

            const uint64_t edge_seed = derive_seed(seed, "exchange-edge", p * 64 + static_cast<uint64_t>(m));
            const Reserve reserve =
                select_reserve(sender, m, tm.entries(recv, m), plan.reserve_size, edge_seed);

            bool pass = true;
            if (plan.run_benefit_test) {
                pass = benefit_test(receiver_models[static_cast<size_t>(recv)],
                                    baselines[static_cast<size_t>(recv)], reserve.points);
            }
            row.benefit_pass = pass ? 1 : 0;
            if (pass) {
                std::vector<int> pool = cluster_rows(sender, m);
                std::vector<int> available = pool;
                if (plan.mode == TransferMode::move && !sender_claimed.empty()) {
                    std::vector<int> tmp;
                    std::set_difference(available.begin(), available.end(), sender_claimed.begin(),
                                        sender_claimed.end(), std::back_inserter(tmp));
                    available = std::move(tmp);
                }
                // prefer points not already spent on the probe
                std::vector<int> fresh;
                std::set_difference(available.begin(), available.end(), reserve.indices.begin(),
                                    reserve.indices.end(), std::back_inserter(fresh));
                if (static_cast<int>(fresh.size()) < plan.transfer_count) fresh = available;

                int want = std::min<int>(plan.transfer_count, static_cast<int>(fresh.size()));
                if (plan.mode == TransferMode::move) {
                    // a cluster counted toward sender diversity must stay
                    // strictly above the threshold after all moves
                    const int pop = static_cast<int>(pool.size());
                    const int already = static_cast<int>(pool.size() - available.size());
                    if (pop > plan.diversity_threshold) {
                        want = std::clamp(want, 0, pop - plan.diversity_threshold - 1 - already);
                    }
                }
                if (want > 0) {
                    Rng rng(derive_seed(edge_seed, "transfer"));
                    PendingTransfer t;
                    t.receiver = recv;
                    t.transmitter = trans;
                    t.cluster = m;
                    t.rows = sample_without_replacement(fresh, want, rng);
                    t.points = gather_rows(sender.points(), t.rows);
                    t.labels.resize(t.rows.size());
                    for (size_t r = 0; r < t.rows.size(); ++r) {
                        t.labels[r] = sender.labels_for_eval()[static_cast<size_t>(t.rows[r])];
                    }
                    if (plan.mode == TransferMode::move) {
                        sender_claimed.insert(sender_claimed.end(), t.rows.begin(), t.rows.end());
                        std::sort(sender_claimed.begin(), sender_claimed.end());
                    }
                    row.points_moved = static_cast<int>(t.rows.size());
                    accepted[static_cast<size_t>(recv)] += 1;
                    pending.push_back(std::move(t));
                }
            }
            report.rows.push_back(row);
        }
    }

    for (const auto& t : pending) {
        datasets[static_cast<size_t>(t.receiver)].append_points(
            t.points, t.labels, LocalDataset::Provenance{t.transmitter, t.cluster});
    }
    for (int j = 0; j < n; ++j) {
        if (!claimed[static_cast<size_t>(j)].empty()) {
            datasets[static_cast<size_t>(j)].remove_points(claimed[static_cast<size_t>(j)]);
        }
    }
    for (int i = 0; i < n; ++i) {
        if (accepted[static_cast<size_t>(i)] > 0) {
            datasets[static_cast<size_t>(i)].set_suspected_clusters(
                datasets[static_cast<size_t>(i)].suspected_clusters() + accepted[static_cast<size_t>(i)]);
        }
    }
    return report;
}

int audit_trust_violations(const std::vector<LocalDataset>& datasets,
                           const std::vector<TrustMatrix>& trust) {
    int violations = 0;
    for (const auto& ld : datasets) {
        for (const auto& tag : ld.provenance()) {
            if (tag.from_client < 0) continue;  // native point
            const auto& tm = trust[static_cast<size_t>(tag.from_client)];
            if (tag.from_cluster < 0 || tag.from_cluster >= tm.clusters() ||
                !tm.permits(ld.client_id(), tag.from_cluster)) {
                ++violations;
            }
        }
    }
    return violations;
}

}  // namespace fedlink
