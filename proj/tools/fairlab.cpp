// Command-line front end: config-driven experiment runs, skew sweeps, the
// gradient-check battery, and dataset export.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>

#include "fairlab/config.hpp"
#include "fairlab/gradcheck_battery.hpp"
#include "fairlab/harness.hpp"

namespace {

fairlab::ExperimentConfig load_with_overrides(const std::string& config_path,
                                              const std::string& out_override,
                                              std::int64_t seed_override) {
    fairlab::ExperimentConfig cfg = fairlab::load_config(config_path);
    if (!out_override.empty()) cfg.output_dir = out_override;
    if (seed_override >= 0) cfg.seeds = {static_cast<std::uint64_t>(seed_override)};
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fairlab: skewed-dataset bias mitigation laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_override;
    std::int64_t seed_override = -1;

    auto* run = app.add_subcommand("run", "Run the experiment described by a config file");
    run->add_option("--config", config_path, "Config file")->required();
    run->add_option("--out", out_override, "Override output directory");
    run->add_option("--seed", seed_override, "Run a single seed instead of the config's list");

    auto* sweep = app.add_subcommand("sweep", "Run the experiment across a list of skew levels");
    std::string skews_arg = "0.5,0.75,0.9,0.95";
    sweep->add_option("--config", config_path, "Config file")->required();
    sweep->add_option("--skews", skews_arg, "Comma-separated skew levels");
    sweep->add_option("--out", out_override, "Override output directory");
    sweep->add_option("--seed", seed_override, "Run a single seed instead of the config's list");

    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every op");
    int instances = 20;
    double eps = 1e-5, tol = 1e-4;
    gradcheck->add_option("--instances", instances, "Random instances per op");
    gradcheck->add_option("--eps", eps, "Finite-difference step");
    gradcheck->add_option("--tol", tol, "Relative error tolerance");

    auto* makeds = app.add_subcommand("make-dataset", "Build the dataset and write it to disk");
    makeds->add_option("--config", config_path, "Config file")->required();
    makeds->add_option("--out", out_override, "Override output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            return fairlab::run_experiment(load_with_overrides(config_path, out_override, seed_override));
        }
        if (sweep->parsed()) {
            std::vector<double> skews;
            for (const auto& s : fairlab::detail::split_list(skews_arg)) skews.push_back(std::stod(s));
            return fairlab::sweep_skew(load_with_overrides(config_path, out_override, seed_override),
                                       skews);
        }
        if (gradcheck->parsed()) {
            auto results = fairlab::run_gradcheck_battery(instances, eps, tol);
            bool all_pass = true;
            for (const auto& e : results) {
                std::printf("%-26s max_rel_error=%.3e  %s\n", e.op.c_str(), e.max_rel_error,
                            e.pass ? "pass" : "FAIL");
                all_pass = all_pass && e.pass;
            }
            std::printf("gradcheck: %s\n", all_pass ? "all ops pass" : "FAILURES present");
            return all_pass ? 0 : 1;
        }
        if (makeds->parsed()) {
            fairlab::ExperimentConfig cfg =
                load_with_overrides(config_path, out_override, seed_override);
            fairlab::DatasetBundle bundle = fairlab::build_experiment_dataset(cfg);
            fairlab::save_bundle(bundle, cfg.output_dir);
            std::printf("wrote %zu train examples and %d test sets to %s\n", bundle.train.size(),
                        bundle.n_domains, cfg.output_dir.c_str());
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
