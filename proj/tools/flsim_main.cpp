// Command-line entry point: runs single experiments or multi-scenario suites
// from JSON config files.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flsim/flsim.hpp"

namespace {

int do_run(const std::string& config_path, const std::optional<std::uint64_t>& seed,
           const std::optional<std::string>& output_dir, bool quiet) {
    flsim::ExperimentConfig cfg = flsim::parse_config(config_path);
    if (seed) cfg.seed = *seed;
    if (output_dir) cfg.output_dir = *output_dir;

    flsim::RunOptions opts;
    opts.progress = quiet ? nullptr : &std::cout;
    const flsim::ExperimentResult result = flsim::run_experiment(cfg, opts);

    if (!quiet) std::cout << '\n';
    std::cout << result.report_text;
    std::cout << "\nwrote " << result.csv_path.string() << '\n';
    return 0;
}

int do_suite(const std::vector<std::string>& config_paths, const std::optional<std::uint64_t>& seed,
             const std::optional<std::string>& output_dir, bool quiet) {
    std::vector<flsim::ExperimentConfig> configs;
    configs.reserve(config_paths.size());
    for (const auto& path : config_paths) {
        flsim::ExperimentConfig cfg = flsim::parse_config(path);
        if (seed) cfg.seed = *seed;
        configs.push_back(std::move(cfg));
    }

    flsim::RunOptions opts;
    opts.progress = quiet ? nullptr : &std::cout;
    const std::filesystem::path base_dir = output_dir.value_or(std::string("out/suite"));
    const flsim::SuiteResult suite = flsim::run_scenario_suite(configs, base_dir, opts);

    if (!quiet) std::cout << '\n';
    std::cout << suite.table_text;
    if (!suite.table_path.empty()) {
        std::cout << "\nwrote " << suite.table_path.string() << '\n';
    }
    return suite.all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated-learning simulator: honest baselines, a fairness-targeting "
                 "model-poisoning attack, and magnitude-based defenses"};
    app.require_subcommand(1);

    std::optional<std::uint64_t> seed;
    std::optional<std::string> output_dir;
    bool quiet = false;

    std::string run_config;
    auto* run = app.add_subcommand("run", "run one experiment from a config file");
    run->add_option("config", run_config, "JSON config file")->required()->check(CLI::ExistingFile);
    run->add_option("--seed", seed, "override the config seed");
    run->add_option("--output-dir", output_dir, "override the config output directory");
    run->add_flag("--quiet", quiet, "suppress per-round progress lines");

    std::vector<std::string> suite_configs;
    auto* suite = app.add_subcommand("suite", "run several scenarios and print a comparison table");
    suite->add_option("configs", suite_configs, "JSON config files, one per scenario")
        ->required()
        ->check(CLI::ExistingFile);
    suite->add_option("--seed", seed, "override every scenario's seed");
    suite->add_option("--output-dir", output_dir, "base directory for all scenario outputs");
    suite->add_flag("--quiet", quiet, "suppress per-scenario and per-round progress lines");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return do_run(run_config, seed, output_dir, quiet);
        return do_suite(suite_configs, seed, output_dir, quiet);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
