#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "flsim/attack.hpp"
#include "flsim/defense.hpp"
#include "flsim/model.hpp"

namespace flsim {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DataConfig {
    enum class Source { synthetic, csv };
    Source source = Source::synthetic;
    int samples_per_class = 200;
    double test_fraction = 0.2;
    std::string csv_path;
};

// Full declarative description of one run. Everything an experiment does is
// a pure function of this struct.
struct ExperimentConfig {
    std::string name = "experiment";
    ModelSpec model;
    TrainingConfig training;
    DataConfig data;
    int num_clients = 3;
    int num_malicious = 0;
    int num_rounds = 100;
    int samples_per_client = 0;  // 0: divide the training pool evenly
    int unfair_set_size = 0;     // 0: all target rows in the clean union, capped at one clean set
    std::set<int> target_classes{0, 1};
    std::optional<AttackConfig> attack;
    DefensePolicy defense;
    std::uint64_t seed = 1;
    std::filesystem::path output_dir = "out";
};

namespace detail {

using nlohmann::json;

inline void reject_unknown_keys(const json& node, const std::set<std::string>& allowed,
                                const std::string& section) {
    for (const auto& item : node.items()) {
        if (!allowed.count(item.key())) {
            throw ConfigError("unknown key: " + section + item.key());
        }
    }
}

template <typename T>
T get_or(const json& node, const char* key, T fallback, const std::string& section) {
    if (!node.contains(key)) return fallback;
    try {
        return node.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(section + key + ": wrong type");
    }
}

inline std::set<int> class_set(const json& node, const char* key, std::set<int> fallback,
                               const std::string& section) {
    if (!node.contains(key)) return fallback;
    if (!node.at(key).is_array()) throw ConfigError(section + key + ": expected an array of class ids");
    std::set<int> out;
    for (const auto& v : node.at(key)) {
        if (!v.is_number_integer()) throw ConfigError(section + key + ": expected integer class ids");
        out.insert(v.get<int>());
    }
    return out;
}

inline ModelSpec parse_model(const json& node) {
    reject_unknown_keys(node, {"architecture", "input_dim", "num_classes", "hidden_sizes"}, "model.");
    ModelSpec spec;
    const std::string arch = get_or<std::string>(node, "architecture", "mlp", "model.");
    if (arch == "softmax_regression") {
        spec.architecture = Architecture::softmax_regression;
    } else if (arch == "mlp") {
        spec.architecture = Architecture::mlp;
        spec.hidden_sizes = {16};
    } else {
        throw ConfigError("model.architecture: expected softmax_regression or mlp, got '" + arch + "'");
    }
    spec.input_dim = get_or<int>(node, "input_dim", 32, "model.");
    spec.num_classes = get_or<int>(node, "num_classes", 10, "model.");
    if (node.contains("hidden_sizes")) {
        spec.hidden_sizes = get_or<std::vector<int>>(node, "hidden_sizes", {}, "model.");
    }
    try {
        spec.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return spec;
}

inline TrainingConfig parse_training(const json& node) {
    reject_unknown_keys(node, {"learning_rate", "local_epochs", "batch_size"}, "training.");
    TrainingConfig cfg;
    cfg.learning_rate = get_or<double>(node, "learning_rate", 0.2, "training.");
    cfg.local_epochs = get_or<int>(node, "local_epochs", 2, "training.");
    cfg.batch_size = get_or<int>(node, "batch_size", 32, "training.");
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("training: ") + e.what());
    }
    return cfg;
}

inline DataConfig parse_data(const json& node) {
    reject_unknown_keys(node, {"source", "samples_per_class", "test_fraction", "path"}, "data.");
    DataConfig cfg;
    const std::string source = get_or<std::string>(node, "source", "synthetic", "data.");
    if (source == "synthetic") {
        cfg.source = DataConfig::Source::synthetic;
    } else if (source == "csv") {
        cfg.source = DataConfig::Source::csv;
        cfg.csv_path = get_or<std::string>(node, "path", "", "data.");
        if (cfg.csv_path.empty()) throw ConfigError("data.path: required when source is csv");
    } else {
        throw ConfigError("data.source: expected synthetic or csv, got '" + source + "'");
    }
    cfg.samples_per_class = get_or<int>(node, "samples_per_class", 200, "data.");
    cfg.test_fraction = get_or<double>(node, "test_fraction", 0.2, "data.");
    if (cfg.samples_per_class <= 0) throw ConfigError("data.samples_per_class: must be positive");
    if (!(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0)) {
        throw ConfigError("data.test_fraction: must lie in (0, 1)");
    }
    return cfg;
}

inline AttackConfig parse_attack(const json& node, const std::set<int>& partition_targets) {
    reject_unknown_keys(node,
                        {"target_classes", "attack_start_round", "reported_count_policy",
                         "fixed_count", "estimated_honest_clients", "estimated_count_per_client",
                         "clip_to_norm", "unfair_mix_ratio"},
                        "attack.");
    AttackConfig cfg;
    cfg.target_classes = class_set(node, "target_classes", partition_targets, "attack.");
    if (cfg.target_classes != partition_targets) {
        throw ConfigError("attack.target_classes: must match partition.target_classes");
    }
    cfg.attack_start_round = get_or<int>(node, "attack_start_round", 0, "attack.");
    const std::string policy =
        get_or<std::string>(node, "reported_count_policy", "match_honest_estimate", "attack.");
    if (policy == "match_honest_estimate") {
        cfg.reported_count_policy = AttackConfig::CountPolicy::match_honest_estimate;
    } else if (policy == "fixed") {
        cfg.reported_count_policy = AttackConfig::CountPolicy::fixed;
        cfg.fixed_count = get_or<std::int64_t>(node, "fixed_count", 0, "attack.");
        if (cfg.fixed_count < 1) throw ConfigError("attack.fixed_count: required and positive when policy is fixed");
    } else {
        throw ConfigError("attack.reported_count_policy: expected match_honest_estimate or fixed");
    }
    // 0 means: resolve from the experiment at run time
    cfg.estimated_honest_clients = get_or<int>(node, "estimated_honest_clients", 0, "attack.");
    cfg.estimated_count_per_client =
        get_or<std::int64_t>(node, "estimated_count_per_client", 0, "attack.");
    if (node.contains("clip_to_norm")) {
        cfg.clip_to_norm = get_or<double>(node, "clip_to_norm", 0.0, "attack.");
        if (!(*cfg.clip_to_norm > 0.0)) throw ConfigError("attack.clip_to_norm: must be positive");
    }
    cfg.unfair_mix_ratio = get_or<double>(node, "unfair_mix_ratio", 0.0, "attack.");
    if (cfg.unfair_mix_ratio < 0.0 || cfg.unfair_mix_ratio > 1.0) {
        throw ConfigError("attack.unfair_mix_ratio: must lie in [0, 1]");
    }
    return cfg;
}

inline DefensePolicy parse_defense(const json& node) {
    reject_unknown_keys(node, {"kind", "bound", "threshold_multiplier"}, "defense.");
    DefensePolicy policy;
    const std::string kind = get_or<std::string>(node, "kind", "none", "defense.");
    if (kind == "none") {
        policy.kind = DefensePolicy::Kind::none;
    } else if (kind == "clip") {
        if (!node.contains("bound") || (node.at("bound").is_string() &&
                                        node.at("bound").get<std::string>() == "adaptive_median")) {
            policy.kind = DefensePolicy::Kind::clip_adaptive_median;
        } else if (node.at("bound").is_number()) {
            policy.kind = DefensePolicy::Kind::clip_fixed;
            policy.clip_bound = node.at("bound").get<double>();
            if (!(policy.clip_bound > 0.0)) throw ConfigError("defense.bound: must be positive");
        } else {
            throw ConfigError("defense.bound: expected a number or 'adaptive_median'");
        }
    } else if (kind == "flag_outliers") {
        policy.kind = DefensePolicy::Kind::flag_outliers;
        policy.threshold_multiplier = get_or<double>(node, "threshold_multiplier", 3.0, "defense.");
        if (!(policy.threshold_multiplier > 1.0)) {
            throw ConfigError("defense.threshold_multiplier: must exceed 1");
        }
    } else {
        throw ConfigError("defense.kind: expected none, clip, or flag_outliers, got '" + kind + "'");
    }
    return policy;
}

}  // namespace detail

inline ExperimentConfig parse_config_json(const nlohmann::json& root,
                                          const std::string& default_name) {
    using detail::get_or;
    detail::reject_unknown_keys(root,
                                {"name", "model", "training", "data", "partition", "attack",
                                 "defense", "num_clients", "num_malicious", "num_rounds", "seed",
                                 "output_dir"},
                                "");
    ExperimentConfig cfg;
    cfg.name = get_or<std::string>(root, "name", default_name, "");
    cfg.model = detail::parse_model(root.value("model", nlohmann::json::object()));
    cfg.training = detail::parse_training(root.value("training", nlohmann::json::object()));
    cfg.data = detail::parse_data(root.value("data", nlohmann::json::object()));

    const auto partition_node = root.value("partition", nlohmann::json::object());
    detail::reject_unknown_keys(partition_node,
                                {"samples_per_client", "unfair_set_size", "target_classes"},
                                "partition.");
    cfg.samples_per_client = get_or<int>(partition_node, "samples_per_client", 0, "partition.");
    cfg.unfair_set_size = get_or<int>(partition_node, "unfair_set_size", 0, "partition.");
    cfg.target_classes = detail::class_set(partition_node, "target_classes", {0, 1}, "partition.");

    cfg.num_clients = get_or<int>(root, "num_clients", 3, "");
    cfg.num_malicious = get_or<int>(root, "num_malicious", 0, "");
    cfg.num_rounds = get_or<int>(root, "num_rounds", 100, "");
    cfg.seed = get_or<std::uint64_t>(root, "seed", 1, "");
    cfg.output_dir = get_or<std::string>(root, "output_dir", "out/" + cfg.name, "");

    if (root.contains("attack")) {
        cfg.attack = detail::parse_attack(root.at("attack"), cfg.target_classes);
    }
    cfg.defense = detail::parse_defense(root.value("defense", nlohmann::json::object()));

    // cross-field invariants
    if (cfg.num_clients < 1) throw ConfigError("num_clients: must be at least 1");
    if (cfg.num_malicious < 0) throw ConfigError("num_malicious: must be non-negative");
    if (cfg.num_malicious > 0 && 2 * cfg.num_malicious >= cfg.num_clients) {
        throw ConfigError("num_malicious: malicious clients must stay a non-majority subset "
                          "(got " + std::to_string(cfg.num_malicious) + " of " +
                          std::to_string(cfg.num_clients) + ")");
    }
    if (cfg.num_rounds < 1) throw ConfigError("num_rounds: must be at least 1");
    if (cfg.samples_per_client < 0) throw ConfigError("partition.samples_per_client: must be non-negative");
    if (cfg.unfair_set_size < 0) throw ConfigError("partition.unfair_set_size: must be non-negative");
    if (cfg.target_classes.empty()) throw ConfigError("partition.target_classes: must be non-empty");
    for (int c : cfg.target_classes) {
        if (c < 0 || c >= cfg.model.num_classes) {
            throw ConfigError("partition.target_classes: class " + std::to_string(c) +
                              " outside [0, " + std::to_string(cfg.model.num_classes) + ")");
        }
    }
    if (static_cast<int>(cfg.target_classes.size()) >= cfg.model.num_classes) {
        throw ConfigError("partition.target_classes: must be a proper subset of all classes");
    }
    if (cfg.attack.has_value() != (cfg.num_malicious > 0)) {
        throw ConfigError(cfg.attack ? "attack: section present but num_malicious is 0"
                                     : "attack: section required when num_malicious > 0");
    }
    if (cfg.attack && cfg.attack->attack_start_round < 0) {
        throw ConfigError("attack.attack_start_round: must be non-negative");
    }
    return cfg;
}

inline ExperimentConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config: " + path.string() + ": " + e.what());
    }
    if (!root.is_object()) throw ConfigError("config: " + path.string() + ": top level must be an object");
    return parse_config_json(root, path.stem().string());
}

// The fully resolved configuration, suitable for re-running the experiment.
inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json root;
    root["name"] = cfg.name;
    root["num_clients"] = cfg.num_clients;
    root["num_malicious"] = cfg.num_malicious;
    root["num_rounds"] = cfg.num_rounds;
    root["seed"] = cfg.seed;
    root["output_dir"] = cfg.output_dir.string();
    root["model"]["architecture"] =
        cfg.model.architecture == Architecture::mlp ? "mlp" : "softmax_regression";
    root["model"]["input_dim"] = cfg.model.input_dim;
    root["model"]["num_classes"] = cfg.model.num_classes;
    if (cfg.model.architecture == Architecture::mlp) {
        root["model"]["hidden_sizes"] = cfg.model.hidden_sizes;
    }
    root["training"]["learning_rate"] = cfg.training.learning_rate;
    root["training"]["local_epochs"] = cfg.training.local_epochs;
    root["training"]["batch_size"] = cfg.training.batch_size;
    root["data"]["source"] = cfg.data.source == DataConfig::Source::csv ? "csv" : "synthetic";
    if (cfg.data.source == DataConfig::Source::csv) {
        root["data"]["path"] = cfg.data.csv_path;
    } else {
        root["data"]["samples_per_class"] = cfg.data.samples_per_class;
    }
    root["data"]["test_fraction"] = cfg.data.test_fraction;
    root["partition"]["samples_per_client"] = cfg.samples_per_client;
    root["partition"]["unfair_set_size"] = cfg.unfair_set_size;
    root["partition"]["target_classes"] = std::vector<int>(cfg.target_classes.begin(),
                                                           cfg.target_classes.end());
    if (cfg.attack) {
        const auto& a = *cfg.attack;
        root["attack"]["attack_start_round"] = a.attack_start_round;
        root["attack"]["reported_count_policy"] =
            a.reported_count_policy == AttackConfig::CountPolicy::fixed ? "fixed"
                                                                        : "match_honest_estimate";
        if (a.reported_count_policy == AttackConfig::CountPolicy::fixed) {
            root["attack"]["fixed_count"] = a.fixed_count;
        }
        root["attack"]["estimated_honest_clients"] = a.estimated_honest_clients;
        root["attack"]["estimated_count_per_client"] = a.estimated_count_per_client;
        if (a.clip_to_norm) root["attack"]["clip_to_norm"] = *a.clip_to_norm;
        root["attack"]["unfair_mix_ratio"] = a.unfair_mix_ratio;
    }
    switch (cfg.defense.kind) {
        case DefensePolicy::Kind::none:
            root["defense"]["kind"] = "none";
            break;
        case DefensePolicy::Kind::clip_fixed:
            root["defense"]["kind"] = "clip";
            root["defense"]["bound"] = cfg.defense.clip_bound;
            break;
        case DefensePolicy::Kind::clip_adaptive_median:
            root["defense"]["kind"] = "clip";
            root["defense"]["bound"] = "adaptive_median";
            break;
        case DefensePolicy::Kind::flag_outliers:
            root["defense"]["kind"] = "flag_outliers";
            root["defense"]["threshold_multiplier"] = cfg.defense.threshold_multiplier;
            break;
    }
    return root;
}

inline std::string describe_defense(const DefensePolicy& policy) {
    switch (policy.kind) {
        case DefensePolicy::Kind::none:
            return "none";
        case DefensePolicy::Kind::clip_fixed:
            return "clip to " + std::to_string(policy.clip_bound);
        case DefensePolicy::Kind::clip_adaptive_median:
            return "clip to adaptive median";
        case DefensePolicy::Kind::flag_outliers:
            return "flag outliers above " + std::to_string(policy.threshold_multiplier) + "x median";
    }
    return "unknown";
}

}  // namespace flsim
