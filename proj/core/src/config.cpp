#include "fedlink/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace fedlink {

namespace {

using nlohmann::json;

void expect_object(const json& j, const std::string& path) {
    if (!j.is_object()) throw parse_error(path + ": expected an object");
}

void check_keys(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key())) {
            throw parse_error("unknown key: " + (path.empty() ? it.key() : path + "." + it.key()));
        }
    }
}

template <typename T>
void read_field(const json& obj, const std::string& path, const char* key, T& out) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    try {
        it->get_to(out);
    } catch (const json::exception& e) {
        throw parse_error(path + "." + key + ": " + e.what());
    }
}

template <typename T>
void read_optional(const json& obj, const std::string& path, const char* key,
                   std::optional<T>& out) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    if (it->is_null()) {
        out.reset();
        return;
    }
    try {
        out = it->get<T>();
    } catch (const json::exception& e) {
        throw parse_error(path + "." + key + ": " + e.what());
    }
}

void parse_dataset(const json& j, DatasetConfig& out) {
    expect_object(j, "dataset");
    check_keys(j, "dataset",
               {"format", "name", "classes", "dim", "per_class", "sigma", "mean_layout", "means",
                "images", "labels", "batches"});
    read_field(j, "dataset", "format", out.format);
    read_field(j, "dataset", "name", out.name);
    read_field(j, "dataset", "classes", out.classes);
    read_field(j, "dataset", "dim", out.dim);
    read_field(j, "dataset", "per_class", out.per_class);
    read_field(j, "dataset", "sigma", out.sigma);
    read_field(j, "dataset", "mean_layout", out.mean_layout);
    read_optional(j, "dataset", "means", out.means);
    read_field(j, "dataset", "images", out.images);
    read_field(j, "dataset", "labels", out.labels);
    read_field(j, "dataset", "batches", out.batches);
}

void parse_partition(const json& j, PartitionConfig& out) {
    expect_object(j, "partition");
    check_keys(j, "partition", {"n_clients", "classes_per_client", "layout"});
    read_field(j, "partition", "n_clients", out.n_clients);
    read_field(j, "partition", "classes_per_client", out.classes_per_client);
    read_field(j, "partition", "layout", out.layout);
}

void parse_trust(const json& j, TrustConfig& out) {
    expect_object(j, "trust");
    check_keys(j, "trust", {"policy", "p", "deny"});
    read_field(j, "trust", "policy", out.policy);
    read_field(j, "trust", "p", out.p);
    read_field(j, "trust", "deny", out.deny);
}

void parse_channel(const json& j, ChannelBlockConfig& out) {
    expect_object(j, "channel");
    check_keys(j, "channel", {"rate", "noise_power", "tx_power", "pathloss_exponent", "side", "positions"});
    read_field(j, "channel", "rate", out.rate);
    read_field(j, "channel", "noise_power", out.noise_power);
    read_field(j, "channel", "tx_power", out.tx_power);
    read_field(j, "channel", "pathloss_exponent", out.pathloss_exponent);
    read_field(j, "channel", "side", out.side);
    read_optional(j, "channel", "positions", out.positions);
}

void parse_embedding(const json& j, EmbeddingConfig& out) {
    expect_object(j, "embedding");
    check_keys(j, "embedding", {"components", "kmeans_max_iters", "kmeans_tol", "kmeans_restarts"});
    read_field(j, "embedding", "components", out.components);
    read_field(j, "embedding", "kmeans_max_iters", out.kmeans_max_iters);
    read_field(j, "embedding", "kmeans_tol", out.kmeans_tol);
    read_field(j, "embedding", "kmeans_restarts", out.kmeans_restarts);
}

void parse_reward(const json& j, RewardConfig& out) {
    expect_object(j, "reward");
    check_keys(j, "reward",
               {"alpha1", "alpha2", "beta", "beta_percentile", "gamma_t_anneal", "episodes", "buffer_size"});
    read_field(j, "reward", "alpha1", out.alpha1);
    read_field(j, "reward", "alpha2", out.alpha2);
    read_optional(j, "reward", "beta", out.beta);
    read_field(j, "reward", "beta_percentile", out.beta_percentile);
    read_optional(j, "reward", "gamma_t_anneal", out.gamma_t_anneal);
    read_field(j, "reward", "episodes", out.episodes);
    read_field(j, "reward", "buffer_size", out.buffer_size);
}

void parse_exchange(const json& j, ExchangeBlockConfig& out) {
    expect_object(j, "exchange");
    check_keys(j, "exchange",
               {"reserve_size", "transfer_count", "mode", "diversity_threshold", "pretrain_eta",
                "uniform_benefit_test"});
    read_field(j, "exchange", "reserve_size", out.reserve_size);
    read_field(j, "exchange", "transfer_count", out.transfer_count);
    read_field(j, "exchange", "mode", out.mode);
    read_field(j, "exchange", "diversity_threshold", out.diversity_threshold);
    read_field(j, "exchange", "pretrain_eta", out.pretrain_eta);
    read_field(j, "exchange", "uniform_benefit_test", out.uniform_benefit_test);
}

void parse_fl(const json& j, FlBlockConfig& out) {
    expect_object(j, "fl");
    check_keys(j, "fl",
               {"schemes", "total_iters", "tau_a", "eta", "batch_size", "mu", "straggler_count",
                "hidden_dims", "bottleneck", "activation", "probe_holdout", "probe_train_frac",
                "probe_iters", "probe_eta", "probe_every"});
    read_field(j, "fl", "schemes", out.schemes);
    read_field(j, "fl", "total_iters", out.total_iters);
    read_field(j, "fl", "tau_a", out.tau_a);
    read_field(j, "fl", "eta", out.eta);
    read_field(j, "fl", "batch_size", out.batch_size);
    read_field(j, "fl", "mu", out.mu);
    read_field(j, "fl", "straggler_count", out.straggler_count);
    read_field(j, "fl", "hidden_dims", out.hidden_dims);
    read_field(j, "fl", "bottleneck", out.bottleneck);
    read_field(j, "fl", "activation", out.activation);
    read_field(j, "fl", "probe_holdout", out.probe_holdout);
    read_field(j, "fl", "probe_train_frac", out.probe_train_frac);
    read_field(j, "fl", "probe_iters", out.probe_iters);
    read_field(j, "fl", "probe_eta", out.probe_eta);
    read_field(j, "fl", "probe_every", out.probe_every);
}

void parse_outputs(const json& j, OutputConfig& out) {
    expect_object(j, "outputs");
    check_keys(j, "outputs", {"link_quality_samples", "dump_channel"});
    read_field(j, "outputs", "link_quality_samples", out.link_quality_samples);
    read_field(j, "outputs", "dump_channel", out.dump_channel);
}

void validate(const ExperimentConfig& cfg) {
    if (cfg.variants.empty()) throw parse_error("variants: must name at least one variant");
    for (const auto& v : cfg.variants) {
        if (v != "proposed" && v != "uniform" && v != "non-iid") {
            throw parse_error("variants: unknown variant '" + v + "'");
        }
    }
    const std::set<std::string> formats = {"synthetic-gmm", "idx-images", "cifar10-binary"};
    if (!formats.count(cfg.dataset.format)) {
        throw parse_error("dataset.format: unknown format '" + cfg.dataset.format + "'");
    }
    if (cfg.dataset.mean_layout != "random" && cfg.dataset.mean_layout != "orthogonal") {
        throw parse_error("dataset.mean_layout: must be 'random' or 'orthogonal'");
    }
    if (cfg.partition.layout != "circular" && cfg.partition.layout != "random") {
        throw parse_error("partition.layout: must be 'circular' or 'random'");
    }
    if (cfg.partition.n_clients < 2) throw parse_error("partition.n_clients: need at least 2");
    if (cfg.trust.policy != "full" && cfg.trust.policy != "bernoulli" && cfg.trust.policy != "deny-list") {
        throw parse_error("trust.policy: must be 'full', 'bernoulli' or 'deny-list'");
    }
    if (cfg.trust.p < 0.0 || cfg.trust.p > 1.0) throw parse_error("trust.p: must be in [0,1]");
    if (cfg.reward.alpha1 < 0.0 || cfg.reward.alpha2 < 0.0) {
        throw parse_error("reward: alpha1 and alpha2 must be nonnegative");
    }
    if (cfg.reward.beta && *cfg.reward.beta <= 0.0) throw parse_error("reward.beta: must be positive");
    if (cfg.reward.beta_percentile < 0.0 || cfg.reward.beta_percentile > 100.0) {
        throw parse_error("reward.beta_percentile: must be in [0,100]");
    }
    if (cfg.reward.episodes < 1 || cfg.reward.buffer_size < 1) {
        throw parse_error("reward: episodes and buffer_size must be >= 1");
    }
    if (cfg.exchange.mode != "copy" && cfg.exchange.mode != "move") {
        throw parse_error("exchange.mode: must be 'copy' or 'move'");
    }
    if (cfg.exchange.reserve_size < 1) throw parse_error("exchange.reserve_size: must be >= 1");
    if (cfg.exchange.transfer_count < 0) throw parse_error("exchange.transfer_count: must be >= 0");
    if (cfg.fl.schemes.empty()) throw parse_error("fl.schemes: must name at least one scheme");
    for (const auto& s : cfg.fl.schemes) {
        if (s != "fedavg" && s != "fedsgd" && s != "fedprox") {
            throw parse_error("fl.schemes: unknown scheme '" + s + "'");
        }
    }
    if (cfg.fl.activation != "sigmoid" && cfg.fl.activation != "relu") {
        throw parse_error("fl.activation: must be 'sigmoid' or 'relu'");
    }
    if (cfg.fl.tau_a < 1) throw parse_error("fl.tau_a: must be >= 1");
    if (cfg.fl.total_iters < cfg.fl.tau_a) throw parse_error("fl.total_iters: must cover one aggregation");
    if (cfg.fl.bottleneck < 1) throw parse_error("fl.bottleneck: must be >= 1");
    if (cfg.fl.probe_holdout <= 0.0 || cfg.fl.probe_holdout >= 1.0) {
        throw parse_error("fl.probe_holdout: must be in (0,1)");
    }
    if (cfg.fl.probe_train_frac <= 0.0 || cfg.fl.probe_train_frac >= 1.0) {
        throw parse_error("fl.probe_train_frac: must be in (0,1)");
    }
    if (cfg.outputs.link_quality_samples < 1) {
        throw parse_error("outputs.link_quality_samples: must be >= 1");
    }
}

json to_json(const ExperimentConfig& cfg) {
    json j;
    j["master_seed"] = cfg.master_seed;
    j["output_dir"] = cfg.output_dir;
    j["variants"] = cfg.variants;
    j["dataset"] = {{"format", cfg.dataset.format}, {"name", cfg.dataset.name},
                    {"classes", cfg.dataset.classes}, {"dim", cfg.dataset.dim},
                    {"per_class", cfg.dataset.per_class}, {"sigma", cfg.dataset.sigma},
                    {"mean_layout", cfg.dataset.mean_layout},
                    {"images", cfg.dataset.images}, {"labels", cfg.dataset.labels},
                    {"batches", cfg.dataset.batches}};
    j["dataset"]["means"] = cfg.dataset.means ? json(*cfg.dataset.means) : json(nullptr);
    j["partition"] = {{"n_clients", cfg.partition.n_clients},
                      {"classes_per_client", cfg.partition.classes_per_client},
                      {"layout", cfg.partition.layout}};
    j["trust"] = {{"policy", cfg.trust.policy}, {"p", cfg.trust.p}, {"deny", cfg.trust.deny}};
    j["channel"] = {{"rate", cfg.channel.rate}, {"noise_power", cfg.channel.noise_power},
                    {"tx_power", cfg.channel.tx_power},
                    {"pathloss_exponent", cfg.channel.pathloss_exponent}, {"side", cfg.channel.side}};
    if (cfg.channel.positions) {
        j["channel"]["positions"] = *cfg.channel.positions;
    } else {
        j["channel"]["positions"] = nullptr;
    }
    j["embedding"] = {{"components", cfg.embedding.components},
                      {"kmeans_max_iters", cfg.embedding.kmeans_max_iters},
                      {"kmeans_tol", cfg.embedding.kmeans_tol},
                      {"kmeans_restarts", cfg.embedding.kmeans_restarts}};
    j["reward"] = {{"alpha1", cfg.reward.alpha1}, {"alpha2", cfg.reward.alpha2},
                   {"beta_percentile", cfg.reward.beta_percentile},
                   {"episodes", cfg.reward.episodes}, {"buffer_size", cfg.reward.buffer_size}};
    j["reward"]["beta"] = cfg.reward.beta ? json(*cfg.reward.beta) : json(nullptr);
    j["reward"]["gamma_t_anneal"] =
        cfg.reward.gamma_t_anneal ? json(*cfg.reward.gamma_t_anneal) : json(nullptr);
    j["exchange"] = {{"reserve_size", cfg.exchange.reserve_size},
                     {"transfer_count", cfg.exchange.transfer_count}, {"mode", cfg.exchange.mode},
                     {"diversity_threshold", cfg.exchange.diversity_threshold},
                     {"pretrain_eta", cfg.exchange.pretrain_eta},
                     {"uniform_benefit_test", cfg.exchange.uniform_benefit_test}};
    j["fl"] = {{"schemes", cfg.fl.schemes}, {"total_iters", cfg.fl.total_iters},
               {"tau_a", cfg.fl.tau_a}, {"eta", cfg.fl.eta}, {"batch_size", cfg.fl.batch_size},
               {"mu", cfg.fl.mu}, {"straggler_count", cfg.fl.straggler_count},
               {"hidden_dims", cfg.fl.hidden_dims}, {"bottleneck", cfg.fl.bottleneck},
               {"activation", cfg.fl.activation}, {"probe_holdout", cfg.fl.probe_holdout},
               {"probe_train_frac", cfg.fl.probe_train_frac}, {"probe_iters", cfg.fl.probe_iters},
               {"probe_eta", cfg.fl.probe_eta}, {"probe_every", cfg.fl.probe_every}};
    j["outputs"] = {{"link_quality_samples", cfg.outputs.link_quality_samples},
                    {"dump_channel", cfg.outputs.dump_channel}};
    return j;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw parse_error(origin + ": " + e.what());
    }
    expect_object(j, origin);
    check_keys(j, "",
               {"_meta", "master_seed", "output_dir", "variants", "dataset", "partition", "trust",
                "channel", "embedding", "reward", "exchange", "fl", "outputs"});

    ExperimentConfig cfg;
    read_field(j, "", "master_seed", cfg.master_seed);
    read_field(j, "", "output_dir", cfg.output_dir);
    read_field(j, "", "variants", cfg.variants);
    if (j.contains("dataset")) parse_dataset(j["dataset"], cfg.dataset);
    if (j.contains("partition")) parse_partition(j["partition"], cfg.partition);
    if (j.contains("trust")) parse_trust(j["trust"], cfg.trust);
    if (j.contains("channel")) parse_channel(j["channel"], cfg.channel);
    if (j.contains("embedding")) parse_embedding(j["embedding"], cfg.embedding);
    if (j.contains("reward")) parse_reward(j["reward"], cfg.reward);
    if (j.contains("exchange")) parse_exchange(j["exchange"], cfg.exchange);
    if (j.contains("fl")) parse_fl(j["fl"], cfg.fl);
    if (j.contains("outputs")) parse_outputs(j["outputs"], cfg.outputs);
    validate(cfg);
    return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw parse_error(path + ": cannot open config file");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path);
}

std::string serialize_config(const ExperimentConfig& cfg, int indent) {
    return to_json(cfg).dump(indent) + "\n";
}

uint64_t config_hash(const ExperimentConfig& cfg) {
    json j = to_json(cfg);
    j.erase("output_dir");
    return fnv1a_64(j.dump());
}

}  // namespace fedlink
