// fedlink CLI: seed-deterministic simulator for D2D-enabled unsupervised
// federated learning with RL graph discovery.

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

#include "fedlink/pipeline.hpp"

namespace {

std::vector<int> parse_counts(const std::string& spec) {
    std::vector<int> counts;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        counts.push_back(std::stoi(item));
    }
    if (counts.empty()) throw fedlink::argument_error("--counts: no straggler counts given");
    return counts;
}

void print_summary(const fedlink::MetricsBundle& bundle) {
    std::cout << "output_dir: " << bundle.output_dir << "\n";
    std::cout << "beta: " << fedlink::format_double(bundle.beta) << "\n";
    std::cout << "lambda offdiag mean (pre): " << fedlink::format_double(bundle.lambda_pre_mean) << "\n";
    if (bundle.lambda_post_mean) {
        std::cout << "lambda offdiag mean (post): " << fedlink::format_double(*bundle.lambda_post_mean)
                  << "\n";
    }
    if (bundle.link_pfail_rl_mean && bundle.link_pfail_uniform_mean) {
        std::cout << "mean link P_D: rl=" << fedlink::format_double(*bundle.link_pfail_rl_mean)
                  << " uniform=" << fedlink::format_double(*bundle.link_pfail_uniform_mean) << "\n";
    }
    for (const auto& v : bundle.variants) {
        for (const auto& [scheme, res] : v.fl) {
            std::cout << v.name << "/" << fedlink::scheme_name(scheme)
                      << ": final_loss=" << fedlink::format_double(res.rows.back().global_loss);
            if (res.rows.back().probe_accuracy) {
                std::cout << " probe_acc=" << fedlink::format_double(*res.rows.back().probe_accuracy);
            }
            std::cout << "\n";
        }
    }
    std::cout << "files: " << bundle.files.size() << " written\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"D2D-enabled unsupervised FL simulator with RL graph discovery"};
    app.require_subcommand(1);

    std::string config_path;
    std::string counts_spec = "0,3,6,9";

    auto* run = app.add_subcommand("run", "Run the full pipeline (graph, exchange, FL, metrics)");
    run->add_option("config", config_path, "experiment config JSON")->required();

    auto* graph = app.add_subcommand("graph", "Run graph discovery and exchange only");
    graph->add_option("config", config_path, "experiment config JSON")->required();

    auto* sweep = app.add_subcommand("sweep-stragglers", "Final loss per straggler count");
    sweep->add_option("config", config_path, "experiment config JSON")->required();
    sweep->add_option("--counts", counts_spec, "comma-separated straggler counts");

    auto* validate = app.add_subcommand("validate", "Parse the config and print the resolved form");
    validate->add_option("config", config_path, "experiment config JSON")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        const fedlink::ExperimentConfig cfg = fedlink::parse_config(config_path);
        if (validate->parsed()) {
            std::cout << fedlink::serialize_config(cfg);
            return 0;
        }
        if (run->parsed()) {
            print_summary(fedlink::run_pipeline(cfg));
            return 0;
        }
        if (graph->parsed()) {
            print_summary(fedlink::run_graph_stage(cfg));
            return 0;
        }
        if (sweep->parsed()) {
            const auto table = fedlink::straggler_sweep(cfg, parse_counts(counts_spec));
            for (const auto& c : table.cells) {
                std::cout << c.variant << "," << fedlink::scheme_name(c.scheme) << ","
                          << c.straggler_count << "," << fedlink::format_double(c.final_loss) << "\n";
            }
            return 0;
        }
    } catch (const fedlink::pipeline_error& e) {
        std::cerr << "error [" << e.stage << "]: " << e.what() << "\n";
        return 2;
    } catch (const fedlink::parse_error& e) {
        std::cerr << "error [stage config]: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
