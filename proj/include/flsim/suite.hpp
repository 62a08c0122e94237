#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "flsim/experiment.hpp"

namespace flsim {

struct SuiteScenario {
    ExperimentConfig config;
    bool ok = false;
    std::string error;
    std::optional<ExperimentResult> result;
};

struct SuiteResult {
    std::vector<SuiteScenario> scenarios;
    std::string table_text;
    std::filesystem::path table_path;  // empty when outputs were not written
    bool all_ok = false;
};

namespace detail {

inline void require_shared_settings(const std::vector<ExperimentConfig>& configs) {
    const auto& head = configs.front();
    for (const auto& cfg : configs) {
        const char* mismatch = nullptr;
        if (cfg.model.architecture != head.model.architecture) mismatch = "model.architecture";
        else if (cfg.model.input_dim != head.model.input_dim) mismatch = "model.input_dim";
        else if (cfg.model.num_classes != head.model.num_classes) mismatch = "model.num_classes";
        else if (cfg.model.hidden_sizes != head.model.hidden_sizes) mismatch = "model.hidden_sizes";
        else if (cfg.data.source != head.data.source) mismatch = "data.source";
        else if (cfg.data.samples_per_class != head.data.samples_per_class) mismatch = "data.samples_per_class";
        else if (cfg.data.test_fraction != head.data.test_fraction) mismatch = "data.test_fraction";
        else if (cfg.data.csv_path != head.data.csv_path) mismatch = "data.path";
        else if (cfg.target_classes != head.target_classes) mismatch = "partition.target_classes";
        if (mismatch) {
            throw ConfigError("suite: scenario '" + cfg.name + "' differs from '" + head.name +
                              "' in " + mismatch + "; suite scenarios must share model and data");
        }
    }
}

}  // namespace detail

// Comparison table across scenarios: one row per scenario name, one column
// group per client count, each holding the final-round target/other/overall
// accuracies.
inline std::string format_suite_table(const std::vector<SuiteScenario>& scenarios) {
    std::vector<std::string> row_names;
    for (const auto& s : scenarios) {
        if (std::find(row_names.begin(), row_names.end(), s.config.name) == row_names.end()) {
            row_names.push_back(s.config.name);
        }
    }
    std::set<int> client_counts;
    for (const auto& s : scenarios) client_counts.insert(s.config.num_clients);
    std::map<std::pair<std::string, int>, const SuiteScenario*> cells;
    for (const auto& s : scenarios) cells[{s.config.name, s.config.num_clients}] = &s;

    char buf[64];
    std::string text;
    std::snprintf(buf, sizeof buf, "%-16s", "");
    text += buf;
    for (int n : client_counts) {
        std::snprintf(buf, sizeof buf, "%*d clients", 17, n);
        text += buf;
    }
    text += '\n';
    std::snprintf(buf, sizeof buf, "%-16s", "scenario");
    text += buf;
    for (std::size_t i = 0; i < client_counts.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%8s%8s%9s", "target", "other", "overall");
        text += buf;
    }
    text += '\n';

    for (const auto& name : row_names) {
        std::snprintf(buf, sizeof buf, "%-16s", name.c_str());
        text += buf;
        for (int n : client_counts) {
            const auto it = cells.find({name, n});
            if (it == cells.end()) {
                std::snprintf(buf, sizeof buf, "%8s%8s%9s", "-", "-", "-");
            } else if (!it->second->ok) {
                std::snprintf(buf, sizeof buf, "%8s%8s%9s", "failed", "failed", "failed");
            } else {
                const auto& report = it->second->result->report;
                std::snprintf(buf, sizeof buf, "%8.2f%8.2f%9.2f", report.table.target_mean,
                              report.table.other_mean, report.final_round.overall_accuracy);
            }
            text += buf;
        }
        text += '\n';
    }

    bool any_failed = false;
    for (const auto& s : scenarios) any_failed |= !s.ok;
    if (any_failed) {
        text += "\nfailures:\n";
        for (const auto& s : scenarios) {
            if (!s.ok) text += "  " + s.config.name + ": " + s.error + '\n';
        }
    }
    return text;
}

// Runs every scenario (a failure in one does not stop the rest), writes each
// run under base_dir/<name>_<clients>c, and renders the combined table.
inline SuiteResult run_scenario_suite(const std::vector<ExperimentConfig>& configs,
                                      const std::filesystem::path& base_dir,
                                      const RunOptions& opts = {}) {
    if (configs.empty()) throw std::invalid_argument("suite: no scenarios given");
    detail::require_shared_settings(configs);
    std::set<std::pair<std::string, int>> keys;
    for (const auto& cfg : configs) {
        if (!keys.insert({cfg.name, cfg.num_clients}).second) {
            throw ConfigError("suite: scenario '" + cfg.name + "' with " +
                              std::to_string(cfg.num_clients) + " clients appears twice");
        }
    }

    SuiteResult suite;
    suite.all_ok = true;
    for (const auto& cfg_in : configs) {
        SuiteScenario scenario;
        scenario.config = cfg_in;
        scenario.config.output_dir =
            base_dir / (cfg_in.name + "_" + std::to_string(cfg_in.num_clients) + "c");
        if (opts.progress) {
            *opts.progress << "[suite] " << cfg_in.name << " (" << cfg_in.num_clients
                           << " clients)\n";
            opts.progress->flush();
        }
        try {
            scenario.result = run_experiment(scenario.config, opts);
            scenario.config = scenario.result->config;
            scenario.ok = true;
        } catch (const std::exception& e) {
            scenario.error = e.what();
            suite.all_ok = false;
        }
        suite.scenarios.push_back(std::move(scenario));
    }

    suite.table_text = format_suite_table(suite.scenarios);
    if (opts.write_outputs) {
        std::filesystem::create_directories(base_dir);
        suite.table_path = base_dir / "suite_table.txt";
        std::ofstream out(suite.table_path);
        if (!out) throw std::runtime_error("suite: cannot write " + suite.table_path.string());
        out << suite.table_text;
    }
    return suite;
}

}  // namespace flsim
