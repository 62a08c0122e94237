#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "flsim/dataset.hpp"
#include "flsim/federation.hpp"
#include "flsim/model.hpp"

namespace flsim {

struct AttackConfig {
    enum class CountPolicy { match_honest_estimate, fixed };

    std::set<int> target_classes;
    int attack_start_round = 0;
    CountPolicy reported_count_policy = CountPolicy::match_honest_estimate;
    std::int64_t fixed_count = 0;              // used by CountPolicy::fixed
    int estimated_honest_clients = 0;          // m
    std::int64_t estimated_count_per_client = 0;  // per-client datapoint guess
    std::optional<double> clip_to_norm;        // attacker-side stealth clipping
    double unfair_mix_ratio = 0.0;  // fraction of representative rows blended into target training

    void validate() const {
        if (target_classes.empty()) throw std::invalid_argument("attack: target_classes must be non-empty");
        if (attack_start_round < 0) throw std::invalid_argument("attack: attack_start_round must be non-negative");
        if (estimated_honest_clients < 1) {
            throw std::invalid_argument("attack: estimated_honest_clients must be at least 1");
        }
        if (estimated_count_per_client < 1) {
            throw std::invalid_argument("attack: estimated_count_per_client must be at least 1");
        }
        if (reported_count_policy == CountPolicy::fixed && fixed_count < 1) {
            throw std::invalid_argument("attack: fixed reported count must be at least 1");
        }
        if (clip_to_norm && !(*clip_to_norm > 0.0)) {
            throw std::invalid_argument("attack: clip_to_norm must be positive");
        }
        if (unfair_mix_ratio < 0.0 || unfair_mix_ratio > 1.0) {
            throw std::invalid_argument("attack: unfair_mix_ratio must lie in [0, 1]");
        }
    }
};

// The update the attacker wants the aggregate to equal.
struct TargetUpdate {
    ParameterVector delta;
    int source_round = 0;
};

// Target construction: plain local training on the attribute-filtered set,
// starting from the current global parameters.
inline TargetUpdate compute_target_update(const ParameterVector& global_params,
                                          const ModelSpec& spec, const LabeledDataset& unfair_set,
                                          const TrainingConfig& cfg, int round = 0) {
    if (unfair_set.rows() == 0) throw std::invalid_argument("compute_target_update: unfair set is empty");
    return TargetUpdate{local_train(global_params, spec, unfair_set, cfg).delta, round};
}

// Clean-update estimate: one training run on the attacker's representative
// data, replicated for each of the m honest clients it expects.
inline std::vector<ClientUpdate> predict_clean_updates(const ParameterVector& global_params,
                                                       const ModelSpec& spec,
                                                       const LabeledDataset& representative_set,
                                                       const TrainingConfig& cfg, int honest_clients,
                                                       std::int64_t count_per_client) {
    if (representative_set.rows() == 0) {
        throw std::invalid_argument("predict_clean_updates: representative set is empty");
    }
    if (honest_clients < 1) throw std::invalid_argument("predict_clean_updates: need at least one honest client");
    const ClientUpdate trained = local_train(global_params, spec, representative_set, cfg);
    std::vector<ClientUpdate> predicted(static_cast<std::size_t>(honest_clients),
                                        ClientUpdate{trained.delta, count_per_client});
    return predicted;
}

// Inverts the count-weighted mean: with n = n0 + sum(n_i), the update
// v = (n*target - sum(n_i * u_i)) / n0 makes the aggregate reproduce the
// target exactly when the predictions match the real updates.
inline ClientUpdate solve_malicious_update(const TargetUpdate& target,
                                           std::span<const ClientUpdate> predicted,
                                           std::int64_t reported_count) {
    if (reported_count < 1) throw std::invalid_argument("solve_malicious_update: reported count must be at least 1");
    long double total = static_cast<long double>(reported_count);
    for (const auto& u : predicted) {
        target.delta.require_same_size(u.delta, "solve_malicious_update");
        if (u.reported_count < 1) {
            throw std::invalid_argument("solve_malicious_update: predicted counts must be at least 1");
        }
        total += static_cast<long double>(u.reported_count);
    }
    const std::size_t dim = target.delta.size();
    std::vector<long double> acc(dim);
    for (std::size_t i = 0; i < dim; ++i) acc[i] = total * target.delta[i];
    for (const auto& u : predicted) {
        const auto weight = static_cast<long double>(u.reported_count);
        for (std::size_t i = 0; i < dim; ++i) acc[i] -= weight * u.delta[i];
    }
    ClientUpdate out;
    out.delta = ParameterVector(dim);
    out.reported_count = reported_count;
    const auto inv = 1.0L / static_cast<long double>(reported_count);
    for (std::size_t i = 0; i < dim; ++i) out.delta[i] = static_cast<double>(acc[i] * inv);
    return out;
}

// Minimum malicious-update magnitude when target and clean updates share
// direction and magnitude x: ((n - sum(n_i)) / n0) * x, which collapses to x.
inline double malicious_norm_bound(double x, std::int64_t n, std::span<const std::int64_t> counts) {
    std::int64_t honest_total = 0;
    for (std::int64_t c : counts) honest_total += c;
    const std::int64_t n0 = n - honest_total;
    if (n0 < 1) {
        throw std::invalid_argument("malicious_norm_bound: n must exceed the honest counts");
    }
    return (static_cast<double>(n - honest_total) / static_cast<double>(n0)) * x;
}

inline void clip_to_norm(ParameterVector& delta, double bound) {
    const double norm = delta.l2_norm();
    if (norm > bound) {
        const double scale = bound / norm;
        for (double& v : delta.values) v *= scale;
    }
}

// What the malicious client computed in one attacked round; kept so the
// simulator can audit the aggregation algebra against the true updates.
struct AttackStepAudit {
    int round = 0;
    TargetUpdate target;
    std::vector<ClientUpdate> predicted;
    std::int64_t reported_count = 0;
    double raw_norm = 0.0;      // before attacker-side clipping
    double shipped_norm = 0.0;  // after
};

// The malicious participant. Before the attack window it trains honestly on
// its representative data; from attack_start_round on it submits the solved
// update that steers the aggregate toward the attribute-biased target.
class MaliciousClient final : public Client {
public:
    MaliciousClient(int id, ModelSpec spec, LabeledDataset unfair_set,
                    LabeledDataset representative_set, TrainingConfig training, AttackConfig attack,
                    std::uint64_t run_seed)
        : id_(id),
          spec_(std::move(spec)),
          unfair_set_(std::move(unfair_set)),
          representative_set_(std::move(representative_set)),
          training_(training),
          attack_(attack),
          run_seed_(run_seed) {
        attack_.validate();
        for (int label : unfair_set_.labels) {
            if (!attack_.target_classes.count(label)) {
                throw std::invalid_argument("malicious client: unfair set row carries a non-target class");
            }
        }
    }

    ClientUpdate produce_update(const ParameterVector& global_params, int round) override {
        last_audit_.reset();
        if (round < attack_.attack_start_round) {
            TrainingConfig cfg = training_;
            cfg.seed = client_train_seed(run_seed_, round, id_);
            return local_train(global_params, spec_, representative_set_, cfg);
        }

        TrainingConfig target_cfg = training_;
        target_cfg.seed = mix_seed(run_seed_, 0x7a26e7u, static_cast<std::uint64_t>(round),
                                   static_cast<std::uint64_t>(id_));
        const TargetUpdate target = compute_target_update(
            global_params, spec_, target_training_set(round), target_cfg, round);

        TrainingConfig predict_cfg = training_;
        predict_cfg.seed = mix_seed(run_seed_, 0x9ed1c7u, static_cast<std::uint64_t>(round),
                                    static_cast<std::uint64_t>(id_));
        std::vector<ClientUpdate> predicted =
            predict_clean_updates(global_params, spec_, representative_set_, predict_cfg,
                                  attack_.estimated_honest_clients, attack_.estimated_count_per_client);

        const std::int64_t reported =
            attack_.reported_count_policy == AttackConfig::CountPolicy::fixed
                ? attack_.fixed_count
                : attack_.estimated_count_per_client;
        ClientUpdate update = solve_malicious_update(target, predicted, reported);

        AttackStepAudit audit;
        audit.round = round;
        audit.target = target;
        audit.reported_count = reported;
        audit.raw_norm = update.delta.l2_norm();
        if (attack_.clip_to_norm) clip_to_norm(update.delta, *attack_.clip_to_norm);
        audit.shipped_norm = update.delta.l2_norm();
        audit.predicted = std::move(predicted);
        last_audit_ = std::move(audit);
        return update;
    }

    int id() const override { return id_; }
    ClientRole role() const override { return ClientRole::malicious; }
    bool attacked(int round) const override { return round >= attack_.attack_start_round; }
    const AttackConfig& config() const { return attack_; }
    // audit from the most recent produce_update call; empty before the window
    const std::optional<AttackStepAudit>& last_audit() const { return last_audit_; }

private:
    LabeledDataset target_training_set(int round) const {
        if (attack_.unfair_mix_ratio <= 0.0) return unfair_set_;
        LabeledDataset mixed = unfair_set_;
        const auto extra = static_cast<std::size_t>(
            std::llround(attack_.unfair_mix_ratio * static_cast<double>(unfair_set_.rows())));
        Rng rng(mix_seed(run_seed_, 0x3b1e9dull, static_cast<std::uint64_t>(round)));
        for (std::size_t k = 0; k < extra && representative_set_.rows() > 0; ++k) {
            mixed.append_row_from(representative_set_,
                                  static_cast<std::size_t>(rng.below(representative_set_.rows())));
        }
        return mixed;
    }

    int id_;
    ModelSpec spec_;
    LabeledDataset unfair_set_;
    LabeledDataset representative_set_;
    TrainingConfig training_;
    AttackConfig attack_;
    std::uint64_t run_seed_;
    std::optional<AttackStepAudit> last_audit_;
};

}  // namespace flsim
