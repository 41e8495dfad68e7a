#include "fedlink/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <numeric>
#include <sstream>

namespace fedlink {

namespace {

namespace fs = std::filesystem;

template <typename F>
auto with_stage(const std::string& stage, F&& fn) {
    try {
        return fn();
    } catch (const pipeline_error&) {
        throw;
    } catch (const std::exception& e) {
        throw pipeline_error(stage, e.what());
    }
}

double percentile(std::vector<double> values, double p) {
    if (values.empty()) throw argument_error("percentile: empty sample");
    std::sort(values.begin(), values.end());
    if (values.size() == 1) return values.front();
    const double rank = (p / 100.0) * double(values.size() - 1);
    const size_t lo = static_cast<size_t>(std::floor(rank));
    const size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = rank - double(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
}

TrustPolicy trust_policy_from_config(const TrustConfig& tc) {
    TrustPolicy policy;
    if (tc.policy == "full") {
        policy.kind = TrustPolicy::Kind::full;
    } else if (tc.policy == "bernoulli") {
        policy.kind = TrustPolicy::Kind::bernoulli;
        policy.p = tc.p;
    } else {
        policy.kind = TrustPolicy::Kind::deny_list;
        policy.denied = tc.deny;
    }
    return policy;
}

DataSource data_source_from_config(const DatasetConfig& dc, uint64_t master_seed) {
    DataSource src;
    src.name = dc.name;
    if (dc.format == "synthetic-gmm") {
        src.format = DataSource::Format::synthetic_gmm;
        src.mean_layout = dc.mean_layout == "orthogonal" ? DataSource::MeanLayout::orthogonal
                                                         : DataSource::MeanLayout::random;
        if (dc.means) {
            Matrix m(dc.means->size(), dc.means->empty() ? 0 : dc.means->front().size());
            for (size_t r = 0; r < dc.means->size(); ++r) {
                if (static_cast<Eigen::Index>((*dc.means)[r].size()) != m.cols()) {
                    throw argument_error("dataset.means: ragged rows");
                }
                for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = (*dc.means)[r][static_cast<size_t>(c)];
            }
            src.means = std::move(m);
        }
        src.classes = dc.classes;
        src.dim = dc.dim;
        src.per_class = dc.per_class;
        src.sigma = dc.sigma;
        src.seed = derive_seed(master_seed, "dataset");
    } else if (dc.format == "idx-images") {
        src.format = DataSource::Format::idx_images;
        src.images_path = dc.images;
        src.labels_path = dc.labels;
    } else {
        src.format = DataSource::Format::cifar10_binary;
        src.batch_paths = dc.batches;
    }
    return src;
}

std::vector<int> model_dims(const ExperimentConfig& cfg, int input_dim) {
    std::vector<int> dims;
    dims.push_back(input_dim);
    for (int h : cfg.fl.hidden_dims) dims.push_back(h);
    dims.push_back(cfg.fl.bottleneck);
    for (auto it = cfg.fl.hidden_dims.rbegin(); it != cfg.fl.hidden_dims.rend(); ++it) {
        dims.push_back(*it);
    }
    dims.push_back(input_dim);
    return dims;
}

// ---- metric file plumbing ----

void write_file(const std::string& dir, const std::string& name, const std::string& body) {
    std::ofstream out(fs::path(dir) / name, std::ios::trunc);
    if (!out) throw format_error(name + ": cannot open for writing");
    out << body;
    if (!out) throw format_error(name + ": write failed");
}

std::string int_matrix_csv(const Eigen::MatrixXi& m, const std::string& header) {
    std::ostringstream out;
    out << header;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) out << ',';
            out << m(i, j);
        }
        out << '\n';
    }
    return out.str();
}

std::string real_matrix_csv(const Matrix& m, const std::string& header) {
    std::ostringstream out;
    out << header;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) out << ',';
            out << format_double(m(i, j));
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace

std::string metrics_header(const ExperimentConfig& cfg) {
    char hash_hex[17];
    snprintf(hash_hex, sizeof(hash_hex), "%016llx",
             static_cast<unsigned long long>(config_hash(cfg)));
    std::ostringstream out;
    out << "# fedlink v" << kVersion << " config_hash=" << hash_hex << " seed=" << cfg.master_seed
        << "\n";
    return out.str();
}

std::string resolve_output_dir(const ExperimentConfig& cfg) {
    if (const char* env = std::getenv("FEDLINK_OUTPUT_DIR"); env && *env) return env;
    return cfg.output_dir;
}

PreparedExperiment prepare_experiment(const ExperimentConfig& cfg) {
    return with_stage("prepare", [&] {
        const Dataset full = load_dataset(data_source_from_config(cfg.dataset, cfg.master_seed));
        const int L = full.n_classes();

        // Hold the probe split out per class before partitioning.
        Rng split_rng = make_rng(cfg.master_seed, "probe-holdout");
        std::vector<std::vector<int>> by_class(static_cast<size_t>(L));
        for (int i = 0; i < full.n(); ++i) {
            by_class[static_cast<size_t>(full.labels_for_eval()[static_cast<size_t>(i)])].push_back(i);
        }
        std::vector<int> probe_train_rows, probe_test_rows, train_rows;
        for (auto& rows : by_class) {
            std::shuffle(rows.begin(), rows.end(), split_rng);
            const int held = std::max(1, static_cast<int>(std::floor(cfg.fl.probe_holdout * double(rows.size()))));
            const int probe_train = std::max(1, static_cast<int>(std::floor(cfg.fl.probe_train_frac * held)));
            for (int i = 0; i < static_cast<int>(rows.size()); ++i) {
                if (i < probe_train) {
                    probe_train_rows.push_back(rows[static_cast<size_t>(i)]);
                } else if (i < held) {
                    probe_test_rows.push_back(rows[static_cast<size_t>(i)]);
                } else {
                    train_rows.push_back(rows[static_cast<size_t>(i)]);
                }
            }
        }
        if (probe_test_rows.empty()) throw argument_error("probe holdout too small for a test split");
        std::sort(probe_train_rows.begin(), probe_train_rows.end());
        std::sort(probe_test_rows.begin(), probe_test_rows.end());
        std::sort(train_rows.begin(), train_rows.end());

        auto gather = [&](const std::vector<int>& rows, Matrix& pts, std::vector<int>& labels) {
            pts.resize(static_cast<Eigen::Index>(rows.size()), full.dim());
            labels.resize(rows.size());
            for (size_t r = 0; r < rows.size(); ++r) {
                pts.row(static_cast<Eigen::Index>(r)) = full.points().row(rows[r]);
                labels[r] = full.labels_for_eval()[static_cast<size_t>(rows[r])];
            }
        };

        PreparedExperiment prep;
        prep.n_clients = cfg.partition.n_clients;
        prep.n_classes = L;
        gather(probe_train_rows, prep.probe_train_points, prep.probe_train_labels);
        gather(probe_test_rows, prep.probe_test_points, prep.probe_test_labels);

        Matrix train_pts;
        std::vector<int> train_labels;
        gather(train_rows, train_pts, train_labels);
        const Dataset train_pool(std::move(train_pts), std::move(train_labels), L, full.name());

        PartitionSpec part;
        part.n_clients = cfg.partition.n_clients;
        part.classes_per_client = cfg.partition.classes_per_client;
        part.layout = cfg.partition.layout == "circular" ? LabelLayout::circular : LabelLayout::random;
        part.seed = derive_seed(cfg.master_seed, "partition");
        prep.clients = partition_noniid(train_pool, part);

        const TrustPolicy policy = trust_policy_from_config(cfg.trust);
        prep.trust.reserve(static_cast<size_t>(prep.n_clients));
        for (int j = 0; j < prep.n_clients; ++j) {
            prep.trust.push_back(build_trust_matrix(
                j, prep.n_clients, prep.clients[static_cast<size_t>(j)].suspected_clusters(), policy,
                derive_seed(cfg.master_seed, "trust", static_cast<uint64_t>(j))));
        }

        ChannelParams chan;
        chan.rate = cfg.channel.rate;
        chan.noise_power = cfg.channel.noise_power;
        chan.tx_power = cfg.channel.tx_power;
        chan.pathloss_exponent = cfg.channel.pathloss_exponent;
        chan.side = cfg.channel.side;
        chan.positions = cfg.channel.positions;
        chan.seed = derive_seed(cfg.master_seed, "channel");
        prep.rss = generate_rss(chan, prep.n_clients);
        prep.p_fail = failure_probability(prep.rss, chan.rate, chan.noise_power);

        std::vector<MomentStats> moments;
        moments.reserve(prep.clients.size());
        for (const auto& ld : prep.clients) moments.push_back(local_moments(ld));
        const int q = std::min(cfg.embedding.components, static_cast<int>(train_pool.dim()));
        prep.basis = fit_shared_pca(moments, q);

        prep.clusters.reserve(prep.clients.size());
        for (auto& ld : prep.clients) {
            prep.clusters.push_back(cluster_local(
                ld, prep.basis, derive_seed(cfg.master_seed, "cluster", static_cast<uint64_t>(ld.client_id())),
                cfg.embedding.kmeans_max_iters, cfg.embedding.kmeans_tol,
                cfg.embedding.kmeans_restarts));
        }

        if (cfg.reward.beta) {
            prep.beta = *cfg.reward.beta;
        } else {
            std::vector<double> dists;
            for (size_t i = 0; i < prep.clusters.size(); ++i) {
                for (size_t j = i + 1; j < prep.clusters.size(); ++j) {
                    const auto& a = prep.clusters[i].centroids;
                    const auto& b = prep.clusters[j].centroids;
                    for (Eigen::Index n = 0; n < a.rows(); ++n) {
                        for (Eigen::Index m = 0; m < b.rows(); ++m) {
                            dists.push_back((a.row(n) - b.row(m)).norm());
                        }
                    }
                }
            }
            prep.beta = percentile(std::move(dists), cfg.reward.beta_percentile);
        }

        prep.reward_params.alpha1 = cfg.reward.alpha1;
        prep.reward_params.alpha2 = cfg.reward.alpha2;
        prep.reward_params.beta = prep.beta;
        prep.reward_params.gamma.t_anneal =
            cfg.reward.gamma_t_anneal.value_or(double(cfg.reward.episodes / cfg.reward.buffer_size));

        prep.lambda_pre = compute_dissimilarity(prep.clusters, prep.trust, prep.beta);

        prep.init_model = init_model(model_dims(cfg, train_pool.dim()),
                                     cfg.fl.activation == "relu" ? Activation::relu : Activation::sigmoid,
                                     derive_seed(cfg.master_seed, "model-init"));
        return prep;
    });
}

ProbeFn make_probe_fn(const PreparedExperiment& prep, const ExperimentConfig& cfg) {
    const Matrix train_pts = prep.probe_train_points;
    const Matrix test_pts = prep.probe_test_points;
    const std::vector<int> train_labels = prep.probe_train_labels;
    const std::vector<int> test_labels = prep.probe_test_labels;
    const int n_classes = prep.n_classes;
    const int iters = cfg.fl.probe_iters;
    const double eta = cfg.fl.probe_eta;
    const uint64_t seed = derive_seed(cfg.master_seed, "probe");
    return [=](const Model& m) {
        const Matrix train_emb = forward(m, train_pts).embedding;
        const Matrix test_emb = forward(m, test_pts).embedding;
        const ProbeHead head = probe_train(train_emb, train_labels, n_classes, iters, eta, seed);
        return probe_eval(head, test_emb, test_labels);
    };
}

Graph sample_uniform_graph(int n_clients, Rng& rng) {
    if (n_clients < 2) throw argument_error("sample_uniform_graph: need at least 2 clients");
    Graph g;
    g.edges.reserve(static_cast<size_t>(n_clients));
    std::uniform_int_distribution<int> pick(0, n_clients - 2);
    for (int i = 0; i < n_clients; ++i) {
        int j = pick(rng);
        if (j >= i) ++j;  // skip self
        g.edges.push_back({j, i});
    }
    return g;
}

double VariantOutcome::final_loss(Scheme s) const {
    for (const auto& [scheme, res] : fl) {
        if (scheme == s) return res.rows.back().global_loss;
    }
    throw argument_error("variant " + name + ": scheme not run");
}

std::optional<double> VariantOutcome::final_probe_accuracy(Scheme s) const {
    for (const auto& [scheme, res] : fl) {
        if (scheme == s) return res.rows.back().probe_accuracy;
    }
    throw argument_error("variant " + name + ": scheme not run");
}

VariantOutcome run_variant_exchange(const ExperimentConfig& cfg, const PreparedExperiment& prep,
                                    const std::string& variant) {
    return with_stage("variant:" + variant, [&] {
        VariantOutcome out;
        out.name = variant;
        out.datasets = prep.clients;
        if (variant == "non-iid") return out;

        const DissimilarityReport* report = &prep.lambda_pre;
        if (variant == "proposed") {
            out.discovery = discover_graph(prep.clusters, prep.trust, prep.p_fail, prep.reward_params,
                                           cfg.reward.episodes, cfg.reward.buffer_size,
                                           derive_seed(cfg.master_seed, "discover"));
            out.graph = out.discovery->graph;
            report = &out.discovery->report;
        } else if (variant == "uniform") {
            Rng rng = make_rng(cfg.master_seed, "uniform-graph");
            out.graph = sample_uniform_graph(prep.n_clients, rng);
        } else {
            throw argument_error("unknown variant: " + variant);
        }

        // One-step pre-training pass per receiver; yields the benefit-test
        // baseline. FL itself still starts from the shared init model.
        std::vector<Model> pretrained;
        std::vector<BaselineLoss> baselines;
        pretrained.reserve(prep.clients.size());
        baselines.reserve(prep.clients.size());
        for (const auto& ld : prep.clients) {
            auto [m, b] = pretrain_baseline(prep.init_model, ld, cfg.exchange.pretrain_eta);
            pretrained.push_back(std::move(m));
            baselines.push_back(b);
        }

        std::vector<ExchangePlan> plans;
        plans.reserve(out.graph->edges.size());
        for (const auto& edge : out.graph->edges) {
            ExchangePlan plan;
            plan.link = edge;
            if (variant == "proposed") {
                // clusters the reward declared worth receiving: trusted and
                // far from every receiver centroid
                plan.eligible_clusters =
                    report->detail[static_cast<size_t>(edge.receiver)]
                                  [static_cast<size_t>(edge.transmitter)]
                        .eligible;
            } else {
                // the uniform baseline knows nothing about dissimilarity:
                // every trusted cluster is probed, the benefit test decides
                const auto& tm = prep.trust[static_cast<size_t>(edge.transmitter)];
                for (int m = 0; m < tm.clusters(); ++m) {
                    if (tm.permits(edge.receiver, m)) plan.eligible_clusters.push_back(m);
                }
            }
            plan.reserve_size = cfg.exchange.reserve_size;
            plan.transfer_count = cfg.exchange.transfer_count;
            plan.mode = cfg.exchange.mode == "move" ? TransferMode::move : TransferMode::copy;
            plan.diversity_threshold = cfg.exchange.diversity_threshold;
            plan.run_benefit_test = variant == "uniform" ? cfg.exchange.uniform_benefit_test : true;
            plans.push_back(std::move(plan));
        }
        out.exchange = execute_exchange(*out.graph, plans, pretrained, baselines, prep.trust,
                                        out.datasets, derive_seed(cfg.master_seed, "exchange-" + variant));

        if (variant == "proposed") {
            // Re-cluster with the grown suspected class counts to measure
            // post-exchange dissimilarity in the same basis.
            std::vector<ClusterModel> post_models;
            std::vector<TrustMatrix> post_trust;
            post_models.reserve(out.datasets.size());
            post_trust.reserve(out.datasets.size());
            const TrustPolicy policy = trust_policy_from_config(cfg.trust);
            for (auto& ld : out.datasets) {
                post_models.push_back(cluster_local(
                    ld, prep.basis,
                    derive_seed(cfg.master_seed, "recluster", static_cast<uint64_t>(ld.client_id())),
                    cfg.embedding.kmeans_max_iters, cfg.embedding.kmeans_tol,
                    cfg.embedding.kmeans_restarts));
                post_trust.push_back(build_trust_matrix(
                    ld.client_id(), prep.n_clients, ld.suspected_clusters(), policy,
                    derive_seed(cfg.master_seed, "trust", static_cast<uint64_t>(ld.client_id()))));
            }
            out.lambda_post = compute_dissimilarity(post_models, post_trust, prep.beta);
        }
        return out;
    });
}

namespace {

VariantOutcome run_variant_full(const ExperimentConfig& cfg, const PreparedExperiment& prep,
                                const std::string& variant, const ProbeFn& probe) {
    VariantOutcome out = run_variant_exchange(cfg, prep, variant);
    return with_stage("fl:" + variant, [&] {
        for (const auto& scheme_name_str : cfg.fl.schemes) {
            FlConfig fl;
            fl.scheme = scheme_from_name(scheme_name_str);
            fl.total_iters = cfg.fl.total_iters;
            fl.tau_a = cfg.fl.tau_a;
            fl.eta = cfg.fl.eta;
            fl.batch_size = cfg.fl.batch_size;
            fl.mu = cfg.fl.mu;
            fl.straggler_count = cfg.fl.straggler_count;
            fl.seed = derive_seed(cfg.master_seed, "fl:" + variant + ":" + scheme_name_str);
            out.fl.emplace_back(fl.scheme, run_fl(fl, out.datasets, prep.init_model, probe,
                                                  cfg.fl.probe_every));
        }
        return out;
    });
}

std::string resolved_config_with_meta(const ExperimentConfig& cfg) {
    char hash_hex[17];
    snprintf(hash_hex, sizeof(hash_hex), "%016llx",
             static_cast<unsigned long long>(config_hash(cfg)));
    std::string body = serialize_config(cfg);
    // splice the meta block in as the first key of the top-level object
    const std::string meta = std::string("{\n  \"_meta\": {\"version\": \"") + kVersion +
                             "\", \"config_hash\": \"" + hash_hex + "\"},";
    return meta + body.substr(1);
}

std::string graph_csv(const Graph& g, const std::string& header) {
    std::ostringstream out;
    out << header << "receiver,transmitter\n";
    std::vector<Graph::Edge> edges = g.edges;
    std::sort(edges.begin(), edges.end(),
              [](const Graph::Edge& a, const Graph::Edge& b) { return a.receiver < b.receiver; });
    for (const auto& e : edges) out << e.receiver << ',' << e.transmitter << '\n';
    return out.str();
}

std::string exchange_csv(const ExchangeReport& report, const std::string& header) {
    std::ostringstream out;
    out << header << "receiver,transmitter,cluster,lambda_eligible,benefit_pass,points_moved\n";
    for (const auto& r : report.rows) {
        out << r.receiver << ',' << r.transmitter << ',' << r.cluster << ',' << r.eligible << ','
            << r.benefit_pass << ',' << r.points_moved << '\n';
    }
    return out.str();
}

std::string rl_trace_csv(const std::vector<DiscoveryTraceRow>& trace, const std::string& header) {
    std::ostringstream out;
    out << header << "episode,client,action,r_local,r_global,r_net_at_last_update\n";
    for (const auto& row : trace) {
        out << row.episode << ',' << row.client << ',' << row.action << ','
            << format_double(row.r_local) << ',' << format_double(row.r_global) << ','
            << format_double(row.r_net_at_last_update) << '\n';
    }
    return out.str();
}

std::string fl_trace_csv(const std::vector<VariantOutcome>& variants, const std::string& header) {
    std::ostringstream out;
    out << header << "iteration,scheme,variant,global_loss,probe_accuracy,straggler_count\n";
    for (const auto& v : variants) {
        for (const auto& [scheme, result] : v.fl) {
            for (const auto& row : result.rows) {
                out << row.iteration << ',' << scheme_name(scheme) << ',' << v.name << ','
                    << format_double(row.global_loss) << ',';
                if (row.probe_accuracy) out << format_double(*row.probe_accuracy);
                out << ',' << row.straggler_count << '\n';
            }
        }
    }
    return out.str();
}

const VariantOutcome* find_variant(const std::vector<VariantOutcome>& variants, const std::string& name) {
    for (const auto& v : variants) {
        if (v.name == name) return &v;
    }
    return nullptr;
}

MetricsBundle emit_bundle(const ExperimentConfig& cfg, const PreparedExperiment& prep,
                          std::vector<VariantOutcome> variants) {
    return with_stage("emit", [&] {
        MetricsBundle bundle;
        bundle.cfg = cfg;
        bundle.hash = config_hash(cfg);
        bundle.beta = prep.beta;
        bundle.variants = std::move(variants);
        bundle.output_dir = resolve_output_dir(cfg);
        fs::create_directories(bundle.output_dir);
        const std::string header = metrics_header(cfg);

        auto emit = [&](const std::string& name, const std::string& body) {
            write_file(bundle.output_dir, name, body);
            bundle.files.push_back(name);
        };

        emit("resolved_config.json", resolved_config_with_meta(cfg));
        if (cfg.outputs.dump_channel) {
            emit("channel_rss.csv", real_matrix_csv(prep.rss.w, header));
            emit("channel_pfail.csv", real_matrix_csv(prep.p_fail, header));
        }

        bundle.lambda_pre_mean = prep.lambda_pre.offdiag_mean();
        const VariantOutcome* proposed = find_variant(bundle.variants, "proposed");
        const VariantOutcome* uniform = find_variant(bundle.variants, "uniform");

        if (proposed && proposed->lambda_post) {
            auto means = emit_heatmap_data(prep.lambda_pre.lambda, proposed->lambda_post->lambda,
                                           bundle.output_dir, header);
            bundle.lambda_pre_mean = means.first;
            bundle.lambda_post_mean = means.second;
            bundle.files.push_back("lambda_pre.csv");
            bundle.files.push_back("lambda_post.csv");
            bundle.files.push_back("lambda_summary.csv");
        } else {
            emit("lambda_pre.csv", int_matrix_csv(prep.lambda_pre.lambda, header));
            std::ostringstream summary;
            summary << header << "matrix,offdiag_mean\npre," << format_double(bundle.lambda_pre_mean)
                    << '\n';
            emit("lambda_summary.csv", summary.str());
        }

        if (proposed) {
            if (proposed->discovery) emit("rl_trace.csv", rl_trace_csv(proposed->discovery->trace, header));
            if (proposed->graph) emit("graph_proposed.csv", graph_csv(*proposed->graph, header));
            if (proposed->exchange) emit("exchange_proposed.csv", exchange_csv(*proposed->exchange, header));
        }
        if (uniform) {
            if (uniform->graph) emit("graph_uniform.csv", graph_csv(*uniform->graph, header));
            if (uniform->exchange) emit("exchange_uniform.csv", exchange_csv(*uniform->exchange, header));
        }

        if (proposed && proposed->graph && uniform && uniform->graph) {
            std::vector<Graph> uniform_samples{*uniform->graph};
            Rng rng = make_rng(cfg.master_seed, "link-quality");
            for (int s = 1; s < cfg.outputs.link_quality_samples; ++s) {
                uniform_samples.push_back(sample_uniform_graph(prep.n_clients, rng));
            }
            auto means = emit_link_quality(*proposed->graph, uniform_samples, prep.p_fail,
                                           bundle.output_dir, header);
            bundle.link_pfail_rl_mean = means.first;
            bundle.link_pfail_uniform_mean = means.second;
            bundle.files.push_back("link_quality.csv");
            bundle.files.push_back("link_quality_summary.csv");
        }

        bool any_fl = false;
        for (const auto& v : bundle.variants) any_fl = any_fl || !v.fl.empty();
        if (any_fl) emit("fl_trace.csv", fl_trace_csv(bundle.variants, header));

        char hash_hex[17];
        snprintf(hash_hex, sizeof(hash_hex), "%016llx", static_cast<unsigned long long>(bundle.hash));
        std::ostringstream manifest;
        manifest << "{\n  \"version\": \"" << kVersion << "\",\n  \"config_hash\": \"" << hash_hex
                 << "\",\n  \"master_seed\": " << cfg.master_seed << ",\n  \"beta\": "
                 << format_double(prep.beta) << ",\n  \"files\": [";
        for (size_t i = 0; i < bundle.files.size(); ++i) {
            manifest << (i ? ", " : "") << '"' << bundle.files[i] << '"';
        }
        manifest << "]\n}\n";
        emit("manifest.json", manifest.str());
        return bundle;
    });
}

// Variant jobs are independent (seeds derive per variant), so they run on
// a small pool and join in config order for deterministic output.
std::vector<VariantOutcome> run_variants_async(
    const std::vector<std::string>& names,
    const std::function<VariantOutcome(const std::string&)>& job) {
    std::vector<std::future<VariantOutcome>> futures;
    futures.reserve(names.size());
    for (const auto& name : names) {
        futures.push_back(std::async(std::launch::async, [&job, name] { return job(name); }));
    }
    std::vector<VariantOutcome> out;
    out.reserve(names.size());
    for (auto& f : futures) out.push_back(f.get());
    return out;
}

}  // namespace

MetricsBundle run_pipeline(const ExperimentConfig& cfg) {
    const PreparedExperiment prep = prepare_experiment(cfg);
    const ProbeFn probe = make_probe_fn(prep, cfg);
    auto variants = run_variants_async(cfg.variants, [&](const std::string& name) {
        return run_variant_full(cfg, prep, name, probe);
    });
    return emit_bundle(cfg, prep, std::move(variants));
}

MetricsBundle run_graph_stage(const ExperimentConfig& cfg) {
    const PreparedExperiment prep = prepare_experiment(cfg);
    std::vector<std::string> names;
    for (const auto& v : cfg.variants) {
        if (v == "proposed" || v == "uniform") names.push_back(v);
    }
    auto variants = run_variants_async(names, [&](const std::string& name) {
        return run_variant_exchange(cfg, prep, name);
    });
    return emit_bundle(cfg, prep, std::move(variants));
}

std::pair<double, double> emit_heatmap_data(const Eigen::MatrixXi& lambda_pre,
                                            const Eigen::MatrixXi& lambda_post,
                                            const std::string& dir, const std::string& header) {
    if (lambda_pre.rows() != lambda_pre.cols() || lambda_post.rows() != lambda_post.cols() ||
        lambda_pre.rows() != lambda_post.rows()) {
        throw argument_error("emit_heatmap_data: matrices must be square with matching size");
    }
    auto offdiag_mean = [](const Eigen::MatrixXi& m) {
        const Eigen::Index n = m.rows();
        if (n < 2) return 0.0;
        long sum = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < n; ++j) {
                if (i != j) sum += m(i, j);
            }
        }
        return double(sum) / double(n * (n - 1));
    };
    const double pre_mean = offdiag_mean(lambda_pre);
    const double post_mean = offdiag_mean(lambda_post);

    write_file(dir, "lambda_pre.csv", int_matrix_csv(lambda_pre, header));
    write_file(dir, "lambda_post.csv", int_matrix_csv(lambda_post, header));
    std::ostringstream summary;
    summary << header << "matrix,offdiag_mean\npre," << format_double(pre_mean) << "\npost,"
            << format_double(post_mean) << '\n';
    write_file(dir, "lambda_summary.csv", summary.str());
    return {pre_mean, post_mean};
}

std::pair<double, double> emit_link_quality(const Graph& graph_rl,
                                            const std::vector<Graph>& graphs_uniform,
                                            const Matrix& p_fail, const std::string& dir,
                                            const std::string& header) {
    if (graphs_uniform.empty()) throw argument_error("emit_link_quality: no uniform graphs");

    std::ostringstream out;
    out << header << "method,receiver,transmitter,p_fail\n";
    double rl_sum = 0.0;
    for (const auto& e : graph_rl.edges) {
        const double p = p_fail(e.receiver, e.transmitter);
        rl_sum += p;
        out << "rl," << e.receiver << ',' << e.transmitter << ',' << format_double(p) << '\n';
    }
    if (graph_rl.edges.empty()) throw argument_error("emit_link_quality: RL graph has no edges");
    const double rl_mean = rl_sum / double(graph_rl.edges.size());

    double uni_sum = 0.0;
    long uni_count = 0;
    for (const auto& g : graphs_uniform) {
        for (const auto& e : g.edges) {
            const double p = p_fail(e.receiver, e.transmitter);
            uni_sum += p;
            ++uni_count;
            out << "uniform," << e.receiver << ',' << e.transmitter << ',' << format_double(p) << '\n';
        }
    }
    if (uni_count == 0) throw argument_error("emit_link_quality: uniform graphs have no edges");
    const double uni_mean = uni_sum / double(uni_count);

    write_file(dir, "link_quality.csv", out.str());
    std::ostringstream summary;
    summary << header << "method,mean_p_fail\nrl," << format_double(rl_mean) << "\nuniform,"
            << format_double(uni_mean) << '\n';
    write_file(dir, "link_quality_summary.csv", summary.str());
    return {rl_mean, uni_mean};
}

double SweepTable::cell(const std::string& variant, Scheme scheme, int count) const {
    for (const auto& c : cells) {
        if (c.variant == variant && c.scheme == scheme && c.straggler_count == count) {
            return c.final_loss;
        }
    }
    throw argument_error("sweep: no cell for " + variant + "/" + scheme_name(scheme) + "/" +
                         std::to_string(count));
}

SweepTable straggler_sweep(const ExperimentConfig& cfg, const std::vector<int>& counts) {
    for (int c : counts) {
        if (c < 0 || c >= cfg.partition.n_clients) {
            throw argument_error("straggler_sweep: count " + std::to_string(c) +
                                 " must be in [0, n_clients)");
        }
    }
    const PreparedExperiment prep = prepare_experiment(cfg);

    std::vector<VariantOutcome> exchanged;
    exchanged.reserve(cfg.variants.size());
    for (const auto& name : cfg.variants) exchanged.push_back(run_variant_exchange(cfg, prep, name));

    struct CellJob {
        size_t variant_idx;
        Scheme scheme;
        int count;
    };
    std::vector<CellJob> jobs;
    for (size_t v = 0; v < exchanged.size(); ++v) {
        for (const auto& scheme_str : cfg.fl.schemes) {
            for (int c : counts) jobs.push_back({v, scheme_from_name(scheme_str), c});
        }
    }

    std::vector<std::future<double>> futures;
    futures.reserve(jobs.size());
    for (const auto& job : jobs) {
        futures.push_back(std::async(std::launch::async, [&, job] {
            return with_stage("sweep", [&] {
                FlConfig fl;
                fl.scheme = job.scheme;
                fl.total_iters = cfg.fl.total_iters;
                fl.tau_a = cfg.fl.tau_a;
                fl.eta = cfg.fl.eta;
                fl.batch_size = cfg.fl.batch_size;
                fl.mu = cfg.fl.mu;
                fl.straggler_count = job.count;
                fl.seed = derive_seed(cfg.master_seed,
                                      "fl:" + exchanged[job.variant_idx].name + ":" + scheme_name(job.scheme));
                const FlResult res =
                    run_fl(fl, exchanged[job.variant_idx].datasets, prep.init_model, nullptr, 0);
                return res.rows.back().global_loss;
            });
        }));
    }

    SweepTable table;
    table.cells.reserve(jobs.size());
    for (size_t i = 0; i < jobs.size(); ++i) {
        table.cells.push_back({exchanged[jobs[i].variant_idx].name, jobs[i].scheme, jobs[i].count,
                               futures[i].get()});
    }

    const std::string dir = resolve_output_dir(cfg);
    fs::create_directories(dir);
    std::ostringstream out;
    out << metrics_header(cfg) << "variant,scheme,straggler_count,final_loss\n";
    for (const auto& c : table.cells) {
        out << c.variant << ',' << scheme_name(c.scheme) << ',' << c.straggler_count << ','
            << format_double(c.final_loss) << '\n';
    }
    write_file(dir, "straggler_sweep.csv", out.str());
    return table;
}

}  // namespace fedlink
