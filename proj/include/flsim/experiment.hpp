#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "flsim/attack.hpp"
#include "flsim/config.hpp"
#include "flsim/dataset.hpp"
#include "flsim/defense.hpp"
#include "flsim/federation.hpp"
#include "flsim/metrics.hpp"
#include "flsim/model.hpp"

namespace flsim {

// Instrumented view of one attacked round. The simulator (unlike the
// attacker) sees the true honest updates, so it can check the aggregation
// algebra: aggregate - target = (1/n) * sum n_i * (u_i - predicted_i)
// whenever the attacker's count estimates are exact.
struct AttackRoundAudit {
    int round = 0;
    // max-coordinate error of the identity above, NaN when the attacker's
    // client-count estimate does not line up with the actual roster
    double identity_residual_inf = std::numeric_limits<double>::quiet_NaN();
    double malicious_raw_norm = 0.0;      // solved update, before attacker-side clipping
    double malicious_shipped_norm = 0.0;  // what actually went to the server
    double median_honest_norm = 0.0;
    double mean_prediction_rel_error = std::numeric_limits<double>::quiet_NaN();
};

struct RoundOutcome {
    RoundRecord record;
    std::vector<ClientUpdate> raw_updates;  // as submitted, roster order, pre-defense
    ParameterVector raw_aggregate;          // pre-defense aggregate
    std::optional<AttackRoundAudit> audit;  // present when exactly one malicious client attacked
};

namespace detail {

inline std::optional<AttackRoundAudit> audit_attacked_round(
    std::span<const std::unique_ptr<Client>> clients, std::span<const ClientUpdate> raw_updates,
    const ParameterVector& raw_aggregate, int round) {
    const MaliciousClient* attacker = nullptr;
    int attackers_active = 0;
    std::vector<const ClientUpdate*> honest;
    std::vector<double> honest_norms;
    for (std::size_t i = 0; i < clients.size(); ++i) {
        if (clients[i]->role() == ClientRole::honest) {
            honest.push_back(&raw_updates[i]);
            honest_norms.push_back(raw_updates[i].delta.l2_norm());
        } else if (const auto* m = dynamic_cast<const MaliciousClient*>(clients[i].get());
                   m && m->last_audit() && m->last_audit()->round == round) {
            ++attackers_active;
            attacker = m;
        }
    }
    if (attackers_active != 1 || honest.empty()) return std::nullopt;

    const AttackStepAudit& step = *attacker->last_audit();
    AttackRoundAudit audit;
    audit.round = round;
    audit.malicious_raw_norm = step.raw_norm;
    audit.malicious_shipped_norm = step.shipped_norm;
    audit.median_honest_norm = lower_median(honest_norms);

    if (step.predicted.size() != honest.size()) return audit;

    long double total = 0.0L;
    for (const auto& u : raw_updates) total += static_cast<long double>(u.reported_count);
    const std::size_t dim = raw_aggregate.size();
    std::vector<long double> acc(dim, 0.0L);
    long double rel_err = 0.0L;
    for (std::size_t k = 0; k < honest.size(); ++k) {
        const ClientUpdate& u = *honest[k];
        const ClientUpdate& predicted = step.predicted[k];
        const auto weight = static_cast<long double>(u.reported_count);
        long double diff2 = 0.0L;
        for (std::size_t i = 0; i < dim; ++i) {
            const long double d =
                static_cast<long double>(u.delta[i]) - static_cast<long double>(predicted.delta[i]);
            acc[i] += weight * d;
            diff2 += d * d;
        }
        rel_err += std::sqrt(static_cast<double>(diff2)) / std::max(u.delta.l2_norm(), 1e-12);
    }
    audit.mean_prediction_rel_error =
        static_cast<double>(rel_err / static_cast<long double>(honest.size()));

    const ParameterVector& target = step.target.delta;
    double residual = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        const double expected = static_cast<double>(acc[i] / total);
        residual = std::max(residual, std::abs((raw_aggregate[i] - target[i]) - expected));
    }
    audit.identity_residual_inf = residual;
    return audit;
}

}  // namespace detail

// One synchronous federation round: broadcast, local updates in roster order,
// screening, count-weighted aggregation, server step, held-out evaluation.
inline RoundOutcome run_round(FederationState& state,
                              std::span<const std::unique_ptr<Client>> clients,
                              const ModelSpec& spec, const LabeledDataset& test_set,
                              const std::set<int>& target_classes, const DefensePolicy& defense) {
    if (clients.empty()) throw std::invalid_argument("run_round: no clients");
    const int round = state.round;

    RoundOutcome out;
    out.raw_updates.reserve(clients.size());
    for (const auto& client : clients) {
        try {
            out.raw_updates.push_back(client->produce_update(state.global_params, round));
        } catch (const std::exception& e) {
            throw std::runtime_error("round " + std::to_string(round) + ": client " +
                                     std::to_string(client->id()) + ": " + e.what());
        }
    }

    RoundRecord record;
    record.round = round;
    record.per_client_update_norm.reserve(clients.size());
    for (const auto& u : out.raw_updates) {
        record.per_client_update_norm.push_back(u.delta.l2_norm());
    }
    for (const auto& client : clients) {
        if (client->attacked(round)) record.attack_active = true;
    }

    out.raw_aggregate = fedavg_aggregate(out.raw_updates);
    out.audit = detail::audit_attacked_round(clients, out.raw_updates, out.raw_aggregate, round);

    DefenseOutcome screened = apply_defense(out.raw_updates, defense);
    record.defense_actions = screened.actions;
    const ParameterVector applied = defense.kind == DefensePolicy::Kind::none
                                        ? out.raw_aggregate
                                        : fedavg_aggregate(screened.updates);
    state.global_params = state.global_params + applied;
    if (!state.global_params.all_finite()) {
        throw std::runtime_error("round " + std::to_string(round) +
                                 ": global parameters are no longer finite");
    }

    const EvalResult eval = evaluate(state.global_params, spec, test_set);
    record.per_class_accuracy = eval.per_class_accuracy;
    record.overall_accuracy = eval.overall_accuracy;
    const FairnessGap gap = fairness_gap(record.per_class_accuracy, target_classes);
    record.target_mean = gap.target_mean;
    record.other_mean = gap.other_mean;
    record.fairness_gap = gap.gap;

    state.round = round + 1;
    out.record = std::move(record);
    return out;
}

struct RunOptions {
    bool write_outputs = true;
    std::ostream* progress = nullptr;  // per-round lines when set
};

struct ExperimentResult {
    ExperimentConfig config;  // as run, with every auto field resolved
    std::vector<RoundRecord> records;
    std::vector<AttackRoundAudit> attack_audit;
    FairnessReport report;
    std::string report_text;
    ParameterVector final_params;
    std::filesystem::path csv_path;     // empty when outputs were not written
    std::filesystem::path report_path;
};

// The whole trajectory is a pure function of the config; every random draw
// descends from cfg.seed.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg_in, const RunOptions& opts = {}) {
    ExperimentConfig cfg = cfg_in;
    cfg.model.validate();
    cfg.training.validate();
    cfg.defense.validate();
    if (cfg.num_clients < 1) throw std::invalid_argument("experiment: num_clients must be at least 1");
    if (cfg.num_malicious < 0) throw std::invalid_argument("experiment: num_malicious must be non-negative");
    if (cfg.num_malicious > 0 && 2 * cfg.num_malicious >= cfg.num_clients) {
        throw std::invalid_argument("experiment: malicious clients must stay a non-majority subset");
    }
    if (cfg.attack.has_value() != (cfg.num_malicious > 0)) {
        throw std::invalid_argument(cfg.attack
                                        ? "experiment: attack configured but num_malicious is 0"
                                        : "experiment: num_malicious > 0 needs an attack section");
    }
    if (cfg.num_rounds < 1) throw std::invalid_argument("experiment: num_rounds must be at least 1");

    LabeledDataset pool;
    if (cfg.data.source == DataConfig::Source::csv) {
        pool = load_csv(cfg.data.csv_path, cfg.model.num_classes);
        if (pool.input_dim != cfg.model.input_dim) {
            throw std::invalid_argument("experiment: csv has " + std::to_string(pool.input_dim) +
                                        " features, model expects " +
                                        std::to_string(cfg.model.input_dim));
        }
    } else {
        pool = generate_synthetic(cfg.model.num_classes, cfg.model.input_dim,
                                  cfg.data.samples_per_class, cfg.seed);
    }
    auto [train_pool, test_set] = train_test_split(pool, cfg.data.test_fraction, cfg.seed);

    if (cfg.samples_per_client == 0) {
        cfg.samples_per_client =
            static_cast<int>(train_pool.rows() / static_cast<std::size_t>(cfg.num_clients));
    }
    if (cfg.samples_per_client < 1) {
        throw std::invalid_argument("experiment: training pool leaves no samples per client");
    }

    PartitionPlan plan;
    plan.num_clients = cfg.num_clients;
    plan.samples_per_client = cfg.samples_per_client;
    plan.unfair_set_size = cfg.unfair_set_size;
    plan.target_classes = cfg.target_classes;
    plan.seed = cfg.seed;
    const Partition parts = partition(train_pool, plan);
    cfg.unfair_set_size = static_cast<int>(parts.unfair_set.rows());

    if (cfg.attack) {
        if (cfg.attack->estimated_honest_clients == 0) {
            cfg.attack->estimated_honest_clients = cfg.num_clients - cfg.num_malicious;
        }
        if (cfg.attack->estimated_count_per_client == 0) {
            cfg.attack->estimated_count_per_client = cfg.samples_per_client;
        }
    }

    // Roster: honest clients first, malicious last; ids are roster positions.
    // The partition draws a clean set for every position, so honest clients
    // hold identical data whether or not the tail positions are malicious.
    std::vector<std::unique_ptr<Client>> clients;
    FederationState state;
    const int honest_n = cfg.num_clients - cfg.num_malicious;
    for (int id = 0; id < cfg.num_clients; ++id) {
        if (id < honest_n) {
            clients.push_back(std::make_unique<HonestClient>(
                id, cfg.model, parts.clean_sets[static_cast<std::size_t>(id)], cfg.training,
                cfg.seed));
            state.roster.push_back({id, ClientRole::honest});
        } else {
            clients.push_back(std::make_unique<MaliciousClient>(id, cfg.model, parts.unfair_set,
                                                                parts.representative_set,
                                                                cfg.training, *cfg.attack, cfg.seed));
            state.roster.push_back({id, ClientRole::malicious});
        }
    }
    state.global_params = init_parameters(cfg.model, cfg.seed);

    ExperimentResult result;
    std::optional<RoundCsvWriter> csv;
    if (opts.write_outputs) {
        std::filesystem::create_directories(cfg.output_dir);
        result.csv_path = cfg.output_dir / "rounds.csv";
        result.report_path = cfg.output_dir / "report.txt";
        csv.emplace(result.csv_path, cfg.model.num_classes);
    }

    result.records.reserve(static_cast<std::size_t>(cfg.num_rounds));
    for (int round = 0; round < cfg.num_rounds; ++round) {
        RoundOutcome outcome =
            run_round(state, clients, cfg.model, test_set, cfg.target_classes, cfg.defense);
        if (outcome.audit) result.attack_audit.push_back(*outcome.audit);
        if (csv) csv->append(outcome.record);
        if (opts.progress) {
            char line[160];
            std::snprintf(line, sizeof line,
                          "round %3d  overall %6.2f  target %6.2f  other %6.2f  gap %7.2f%s\n",
                          outcome.record.round, outcome.record.overall_accuracy,
                          outcome.record.target_mean, outcome.record.other_mean,
                          outcome.record.fairness_gap,
                          outcome.record.attack_active ? "  [attack]" : "");
            *opts.progress << line;
            opts.progress->flush();
        }
        result.records.push_back(std::move(outcome.record));
    }

    ReportContext ctx;
    ctx.scenario_name = cfg.name;
    ctx.target_classes = cfg.target_classes;
    ctx.num_clients = cfg.num_clients;
    ctx.num_malicious = cfg.num_malicious;
    ctx.attack_start_round = cfg.attack ? cfg.attack->attack_start_round : -1;
    ctx.num_rounds = cfg.num_rounds;
    ctx.defense_description = describe_defense(cfg.defense);
    result.report = render_report(result.records, ctx);
    result.report_text = format_report(result.report, ctx);
    result.final_params = std::move(state.global_params);
    result.config = cfg;

    if (opts.write_outputs) {
        std::ofstream report_out(result.report_path);
        if (!report_out) {
            throw std::runtime_error("experiment: cannot write " + result.report_path.string());
        }
        report_out << result.report_text;
        const auto resolved_path = cfg.output_dir / "config_resolved.json";
        std::ofstream cfg_out(resolved_path);
        if (!cfg_out) {
            throw std::runtime_error("experiment: cannot write " + resolved_path.string());
        }
        cfg_out << config_to_json(cfg).dump(2) << '\n';
    }
    return result;
}

}  // namespace flsim
