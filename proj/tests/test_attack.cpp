#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "flsim/attack.hpp"

using namespace flsim;

namespace {

ModelSpec small_mlp(int in, int classes) {
    ModelSpec spec;
    spec.architecture = Architecture::mlp;
    spec.input_dim = in;
    spec.hidden_sizes = {6};
    spec.num_classes = classes;
    return spec;
}

TrainingConfig quick_training(std::uint64_t seed) {
    TrainingConfig cfg;
    cfg.learning_rate = 0.2;
    cfg.local_epochs = 2;
    cfg.batch_size = 32;
    cfg.seed = seed;
    return cfg;
}

AttackConfig basic_attack() {
    AttackConfig attack;
    attack.target_classes = {0, 1};
    attack.attack_start_round = 0;
    attack.estimated_honest_clients = 2;
    attack.estimated_count_per_client = 40;
    return attack;
}

TargetUpdate target_of(std::vector<double> values) {
    return TargetUpdate{ParameterVector(std::move(values)), 0};
}

}  // namespace

TEST_CASE("solve_malicious_update reproduces the hand example") {
    // n = 1 + 1 = 2, v = (2*1 - 1*0) / 1 = 2
    const auto target = target_of({1.0});
    const std::vector<ClientUpdate> predicted{ClientUpdate{ParameterVector(std::vector<double>{0.0}), 1}};
    const auto v = solve_malicious_update(target, predicted, 1);
    REQUIRE(v.delta[0] == 2.0);
    REQUIRE(v.reported_count == 1);
}

TEST_CASE("when every prediction already equals the target the solution is the target") {
    const auto target = target_of({0.25, -1.5, 3.0});
    std::vector<ClientUpdate> predicted;
    for (std::int64_t c : {5, 9, 200}) predicted.push_back(ClientUpdate{target.delta, c});
    const auto v = solve_malicious_update(target, predicted, 7);
    for (std::size_t i = 0; i < 3; ++i) {
        REQUIRE_THAT(v.delta[i], Catch::Matchers::WithinAbs(target.delta[i], 1e-15));
    }
}

TEST_CASE("perfect predictions recover the target through aggregation") {
    Rng rng(101);
    const std::size_t dim = 50;
    std::vector<double> m(dim);
    for (double& x : m) x = rng.uniform(-1.0, 1.0);
    const auto target = target_of(m);

    std::vector<ClientUpdate> honest;
    for (std::int64_t c : {37, 12, 90, 55}) {
        std::vector<double> u(dim);
        for (double& x : u) x = rng.uniform(-1.0, 1.0);
        honest.push_back(ClientUpdate{ParameterVector(std::move(u)), c});
    }

    // attacker predicts the honest updates exactly
    auto v = solve_malicious_update(target, honest, 20);
    auto all = honest;
    all.push_back(v);
    const auto aggregate = fedavg_aggregate(all);
    for (std::size_t i = 0; i < dim; ++i) {
        REQUIRE_THAT(aggregate[i], Catch::Matchers::WithinAbs(target.delta[i], 1e-9));
    }
}

TEST_CASE("a larger reported count shrinks the correction the attacker must ship") {
    Rng rng(103);
    const std::size_t dim = 20;
    std::vector<double> m(dim);
    for (double& x : m) x = rng.uniform(-1.0, 1.0);
    const auto target = target_of(m);
    std::vector<ClientUpdate> predicted;
    for (std::int64_t c : {40, 40, 40}) {
        std::vector<double> u(dim);
        for (double& x : u) x = rng.uniform(-1.0, 1.0);
        predicted.push_back(ClientUpdate{ParameterVector(std::move(u)), c});
    }

    double previous = std::numeric_limits<double>::infinity();
    for (std::int64_t n0 : {1, 2, 4, 8, 16, 64}) {
        const auto v = solve_malicious_update(target, predicted, n0);
        const double correction = (v.delta - target.delta).l2_norm();
        REQUIRE(correction < previous);
        previous = correction;
    }
}

TEST_CASE("solve_malicious_update rejects malformed inputs") {
    const auto target = target_of({1.0});
    const std::vector<ClientUpdate> predicted{ClientUpdate{ParameterVector(std::vector<double>{0.0}), 1}};
    REQUIRE_THROWS_WITH(solve_malicious_update(target, predicted, 0),
                        Catch::Matchers::ContainsSubstring("at least 1"));

    const std::vector<ClientUpdate> bad_count{ClientUpdate{ParameterVector(std::vector<double>{0.0}), 0}};
    REQUIRE_THROWS_WITH(solve_malicious_update(target, bad_count, 1),
                        Catch::Matchers::ContainsSubstring("predicted counts"));

    const std::vector<ClientUpdate> mismatched{ClientUpdate{ParameterVector({0.0, 1.0}), 1}};
    REQUIRE_THROWS_WITH(solve_malicious_update(target, mismatched, 1),
                        Catch::Matchers::ContainsSubstring("solve_malicious_update"));
}

TEST_CASE("the aligned-magnitude norm bound collapses to x") {
    const std::vector<std::int64_t> counts{30, 30, 39};
    REQUIRE(malicious_norm_bound(3.7, 100, counts) == 3.7);

    const std::vector<std::int64_t> small{10, 10};
    REQUIRE(malicious_norm_bound(0.125, 100, small) == 0.125);

    REQUIRE_THROWS_WITH(malicious_norm_bound(1.0, 99, counts),
                        Catch::Matchers::ContainsSubstring("must exceed"));
}

TEST_CASE("an aligned construction attains the bound") {
    // target and every prediction share direction e0 and magnitude x
    const double x = 2.5;
    std::vector<double> direction(10, 0.0);
    direction[0] = x;
    const auto target = target_of(direction);
    std::vector<ClientUpdate> predicted;
    for (std::int64_t c : {25, 25, 30}) predicted.push_back(ClientUpdate{target.delta, c});

    const std::int64_t n0 = 20;  // n = 100
    const auto v = solve_malicious_update(target, predicted, n0);
    const std::vector<std::int64_t> counts{25, 25, 30};
    const double bound = malicious_norm_bound(x, 100, counts);
    REQUIRE_THAT(v.delta.l2_norm(), Catch::Matchers::WithinAbs(bound, 1e-9));
}

TEST_CASE("clip_to_norm rescales only above the bound") {
    ParameterVector delta({3.0, 4.0});  // norm 5
    auto untouched = delta;
    clip_to_norm(untouched, 10.0);
    REQUIRE(untouched.values == delta.values);

    auto clipped = delta;
    clip_to_norm(clipped, 2.0);
    REQUIRE_THAT(clipped.l2_norm(), Catch::Matchers::WithinAbs(2.0, 1e-12));
    // direction preserved: clipped = (2/5) * delta
    REQUIRE_THAT(clipped[0], Catch::Matchers::WithinAbs(1.2, 1e-12));
    REQUIRE_THAT(clipped[1], Catch::Matchers::WithinAbs(1.6, 1e-12));
}

TEST_CASE("predict_clean_updates replicates one training run") {
    const auto spec = small_mlp(6, 3);
    const auto data = generate_synthetic(3, 6, 20, 111);
    const auto params = init_parameters(spec, 111);
    const auto cfg = quick_training(client_train_seed(111, 4, 2));

    const auto predicted = predict_clean_updates(params, spec, data, cfg, 3, 60);
    REQUIRE(predicted.size() == 3);
    for (const auto& p : predicted) {
        REQUIRE(p.reported_count == 60);
        REQUIRE(p.delta.values == predicted[0].delta.values);
    }

    // with the honest client's data and seed schedule the prediction is exact
    HonestClient honest(2, spec, data, quick_training(0), /*run_seed=*/111);
    const auto real = honest.produce_update(params, 4);
    REQUIRE(predicted[0].delta.values == real.delta.values);

    REQUIRE_THROWS_WITH(predict_clean_updates(params, spec, LabeledDataset{}, cfg, 3, 60),
                        Catch::Matchers::ContainsSubstring("representative set is empty"));
    REQUIRE_THROWS_WITH(predict_clean_updates(params, spec, data, cfg, 0, 60),
                        Catch::Matchers::ContainsSubstring("honest client"));
}

TEST_CASE("compute_target_update is plain training on the unfair set") {
    const auto spec = small_mlp(8, 5);
    const auto pool = generate_synthetic(5, 8, 50, 113);
    const auto unfair = filter_by_classes(pool, {0, 1});
    const auto params = init_parameters(spec, 113);
    const auto cfg = quick_training(113);

    const auto target = compute_target_update(params, spec, unfair, cfg, 9);
    REQUIRE(target.source_round == 9);
    REQUIRE(target.delta.values == local_train(params, spec, unfair, cfg).delta.values);

    REQUIRE_THROWS_WITH(compute_target_update(params, spec, LabeledDataset{}, cfg),
                        Catch::Matchers::ContainsSubstring("unfair set is empty"));
}

TEST_CASE("repeatedly applying target updates collapses the model onto the target classes") {
    const auto spec = small_mlp(8, 5);
    const auto pool = generate_synthetic(5, 8, 50, 117);
    const auto unfair = filter_by_classes(pool, {0, 1});
    auto params = init_parameters(spec, 117);
    auto cfg = quick_training(117);

    for (int round = 0; round < 30; ++round) {
        cfg.seed = 117 + static_cast<std::uint64_t>(round);
        params = params + compute_target_update(params, spec, unfair, cfg, round).delta;
    }

    const auto result = evaluate(params, spec, pool);
    REQUIRE(result.per_class_accuracy[0] >= 80.0);
    REQUIRE(result.per_class_accuracy[1] >= 80.0);
    for (std::size_t c = 2; c < 5; ++c) REQUIRE(result.per_class_accuracy[c] <= 15.0);
}

TEST_CASE("MaliciousClient trains honestly before its window") {
    const auto spec = small_mlp(6, 4);
    const auto pool = generate_synthetic(4, 6, 40, 121);
    const auto unfair = filter_by_classes(pool, {0});
    const auto representative = filter_by_classes(pool, {0, 1, 2, 3});

    auto attack = basic_attack();
    attack.target_classes = {0};
    attack.attack_start_round = 10;
    MaliciousClient client(3, spec, unfair, representative, quick_training(0), attack, /*run_seed=*/121);
    REQUIRE(client.role() == ClientRole::malicious);
    REQUIRE(!client.attacked(9));
    REQUIRE(client.attacked(10));

    const auto params = init_parameters(spec, 121);
    const auto update = client.produce_update(params, 6);
    REQUIRE(!client.last_audit().has_value());

    TrainingConfig cfg = quick_training(0);
    cfg.seed = client_train_seed(121, 6, 3);
    const auto expected = local_train(params, spec, representative, cfg);
    REQUIRE(update.delta.values == expected.delta.values);
    REQUIRE(update.reported_count == expected.reported_count);
}

TEST_CASE("MaliciousClient rejects impure unfair sets") {
    const auto spec = small_mlp(6, 4);
    const auto pool = generate_synthetic(4, 6, 10, 123);
    auto attack = basic_attack();  // targets {0, 1}
    REQUIRE_THROWS_WITH(
        MaliciousClient(0, spec, pool, pool, quick_training(0), attack, 123),
        Catch::Matchers::ContainsSubstring("non-target class"));
}

TEST_CASE("an attacked round ships the solved update and records an audit") {
    const auto spec = small_mlp(6, 4);
    const auto pool = generate_synthetic(4, 6, 40, 127);
    const auto unfair = filter_by_classes(pool, {0, 1});
    const auto representative = pool;

    auto attack = basic_attack();
    attack.estimated_honest_clients = 2;
    attack.estimated_count_per_client = 160;
    MaliciousClient client(0, spec, unfair, representative, quick_training(0), attack, 127);

    const auto params = init_parameters(spec, 127);
    const auto update = client.produce_update(params, 5);
    REQUIRE(client.last_audit().has_value());
    const auto& audit = *client.last_audit();
    REQUIRE(audit.round == 5);
    REQUIRE(audit.reported_count == 160);
    REQUIRE(update.reported_count == 160);
    REQUIRE(audit.predicted.size() == 2);
    REQUIRE_THAT(audit.raw_norm, Catch::Matchers::WithinAbs(update.delta.l2_norm(), 1e-12));
    REQUIRE(audit.shipped_norm == audit.raw_norm);  // no attacker-side clipping configured

    // shipped update re-derives from the audited target and predictions
    const auto rebuilt = solve_malicious_update(audit.target, audit.predicted, audit.reported_count);
    REQUIRE(rebuilt.delta.values == update.delta.values);

    // deterministic across a fresh instance
    MaliciousClient twin(0, spec, unfair, representative, quick_training(0), attack, 127);
    REQUIRE(twin.produce_update(params, 5).delta.values == update.delta.values);
}

TEST_CASE("attacker-side clipping caps the shipped norm") {
    const auto spec = small_mlp(6, 4);
    const auto pool = generate_synthetic(4, 6, 40, 131);
    const auto unfair = filter_by_classes(pool, {0, 1});

    auto attack = basic_attack();
    attack.clip_to_norm = 0.05;
    MaliciousClient client(0, spec, unfair, pool, quick_training(0), attack, 131);
    const auto params = init_parameters(spec, 131);
    const auto update = client.produce_update(params, 0);
    const auto& audit = *client.last_audit();
    REQUIRE(audit.raw_norm > 0.05);  // the solved correction is large at this scale
    REQUIRE_THAT(audit.shipped_norm, Catch::Matchers::WithinAbs(0.05, 1e-12));
    REQUIRE_THAT(update.delta.l2_norm(), Catch::Matchers::WithinAbs(0.05, 1e-12));
}

TEST_CASE("reported-count policies feed through to the shipped update") {
    const auto spec = small_mlp(6, 4);
    const auto pool = generate_synthetic(4, 6, 40, 137);
    const auto unfair = filter_by_classes(pool, {0, 1});
    const auto params = init_parameters(spec, 137);

    auto fixed = basic_attack();
    fixed.reported_count_policy = AttackConfig::CountPolicy::fixed;
    fixed.fixed_count = 7;
    MaliciousClient fixed_client(0, spec, unfair, pool, quick_training(0), fixed, 137);
    REQUIRE(fixed_client.produce_update(params, 0).reported_count == 7);

    auto matched = basic_attack();
    matched.estimated_count_per_client = 55;
    MaliciousClient matched_client(0, spec, unfair, pool, quick_training(0), matched, 137);
    REQUIRE(matched_client.produce_update(params, 0).reported_count == 55);
}

TEST_CASE("attack config validation covers every knob") {
    auto attack = basic_attack();
    REQUIRE_NOTHROW(attack.validate());

    auto no_targets = attack;
    no_targets.target_classes.clear();
    REQUIRE_THROWS_WITH(no_targets.validate(), Catch::Matchers::ContainsSubstring("target_classes"));

    auto bad_start = attack;
    bad_start.attack_start_round = -1;
    REQUIRE_THROWS_WITH(bad_start.validate(), Catch::Matchers::ContainsSubstring("attack_start_round"));

    auto bad_fixed = attack;
    bad_fixed.reported_count_policy = AttackConfig::CountPolicy::fixed;
    REQUIRE_THROWS_WITH(bad_fixed.validate(), Catch::Matchers::ContainsSubstring("fixed reported count"));

    auto bad_clip = attack;
    bad_clip.clip_to_norm = 0.0;
    REQUIRE_THROWS_WITH(bad_clip.validate(), Catch::Matchers::ContainsSubstring("clip_to_norm"));

    auto bad_mix = attack;
    bad_mix.unfair_mix_ratio = 1.5;
    REQUIRE_THROWS_WITH(bad_mix.validate(), Catch::Matchers::ContainsSubstring("unfair_mix_ratio"));
}
