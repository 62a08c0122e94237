#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <vector>

#include "flsim/experiment.hpp"
#include "flsim/suite.hpp"

using namespace flsim;

namespace {

std::filesystem::path temp_dir(const char* name) {
    const auto dir = std::filesystem::temp_directory_path() / "flsim_tests" / name;
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// fixed-update client for exercising the server loop in isolation
class StubClient final : public Client {
public:
    StubClient(int id, ParameterVector delta, std::int64_t count, bool fail = false)
        : id_(id), delta_(std::move(delta)), count_(count), fail_(fail) {}

    ClientUpdate produce_update(const ParameterVector&, int) override {
        if (fail_) throw std::runtime_error("no data this round");
        return ClientUpdate{delta_, count_};
    }
    int id() const override { return id_; }
    ClientRole role() const override { return ClientRole::honest; }

private:
    int id_;
    ParameterVector delta_;
    std::int64_t count_;
    bool fail_;
};

ModelSpec tiny_mlp() {
    ModelSpec spec;
    spec.architecture = Architecture::mlp;
    spec.input_dim = 8;
    spec.hidden_sizes = {6};
    spec.num_classes = 4;
    return spec;
}

// small but complete experiment; runs in well under a second
ExperimentConfig tiny_config(const std::string& name) {
    ExperimentConfig cfg;
    cfg.name = name;
    cfg.model = tiny_mlp();
    cfg.training.learning_rate = 0.2;
    cfg.training.local_epochs = 2;
    cfg.training.batch_size = 32;
    cfg.data.samples_per_class = 40;
    cfg.data.test_fraction = 0.2;
    cfg.num_clients = 3;
    cfg.num_rounds = 6;
    cfg.target_classes = {0, 1};
    cfg.seed = 5;
    return cfg;
}

ExperimentConfig tiny_attacked(const std::string& name, int start_round) {
    auto cfg = tiny_config(name);
    cfg.num_clients = 5;
    cfg.num_malicious = 1;
    AttackConfig attack;
    attack.target_classes = cfg.target_classes;
    attack.attack_start_round = start_round;
    cfg.attack = attack;
    return cfg;
}

struct ServerFixture {
    ModelSpec spec = tiny_mlp();
    LabeledDataset test_set = generate_synthetic(4, 8, 10, 77);
    FederationState state;

    ServerFixture() { state.global_params = init_parameters(spec, 77); }

    RoundOutcome step(std::vector<std::unique_ptr<Client>>& clients,
                      const DefensePolicy& defense = {}) {
        return run_round(state, clients, spec, test_set, {0, 1}, defense);
    }
};

}  // namespace

TEST_CASE("zero updates leave the global model untouched") {
    ServerFixture fx;
    const auto start = fx.state.global_params;
    std::vector<std::unique_ptr<Client>> clients;
    for (int id = 0; id < 3; ++id) {
        clients.push_back(std::make_unique<StubClient>(id, ParameterVector(start.size()), 10));
    }
    const auto outcome = fx.step(clients);
    REQUIRE(fx.state.global_params.values == start.values);
    REQUIRE(fx.state.round == 1);
    REQUIRE(outcome.record.round == 0);
    REQUIRE(!outcome.record.attack_active);
    REQUIRE(outcome.record.defense_actions.empty());
    REQUIRE(outcome.record.per_client_update_norm == std::vector<double>{0.0, 0.0, 0.0});
    REQUIRE(!outcome.audit.has_value());
}

TEST_CASE("a single client moves the global model by exactly its update") {
    ServerFixture fx;
    const auto start = fx.state.global_params;
    ParameterVector delta(start.size());
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = 0.001 * static_cast<double>(i % 7);

    std::vector<std::unique_ptr<Client>> clients;
    clients.push_back(std::make_unique<StubClient>(0, delta, 42));
    fx.step(clients);
    const auto expected = start + delta;
    REQUIRE(fx.state.global_params.values == expected.values);
}

TEST_CASE("a failing client is reported with its round and id") {
    ServerFixture fx;
    std::vector<std::unique_ptr<Client>> clients;
    clients.push_back(std::make_unique<StubClient>(0, ParameterVector(fx.state.global_params.size()), 1));
    clients.push_back(std::make_unique<StubClient>(1, ParameterVector(1), 1, /*fail=*/true));
    REQUIRE_THROWS_WITH(fx.step(clients),
                        Catch::Matchers::ContainsSubstring("round 0: client 1: no data this round"));
}

TEST_CASE("screening excludes the oversized stub from the applied aggregate") {
    ServerFixture fx;
    const auto start = fx.state.global_params;
    const std::size_t dim = start.size();

    ParameterVector small(dim);
    small[0] = 0.01;
    ParameterVector huge(dim);
    huge[0] = 50.0;

    std::vector<std::unique_ptr<Client>> clients;
    clients.push_back(std::make_unique<StubClient>(0, small, 10));
    clients.push_back(std::make_unique<StubClient>(1, small, 10));
    clients.push_back(std::make_unique<StubClient>(2, huge, 10));

    DefensePolicy flag;
    flag.kind = DefensePolicy::Kind::flag_outliers;
    flag.threshold_multiplier = 2.0;
    const auto outcome = fx.step(clients, flag);

    REQUIRE(outcome.record.defense_actions.size() == 1);
    REQUIRE(outcome.record.defense_actions[0].kind == DefenseAction::Kind::excluded);
    REQUIRE(outcome.record.defense_actions[0].client_index == 2);
    // raw norms and raw aggregate still describe what was submitted
    REQUIRE_THAT(outcome.record.per_client_update_norm[2], Catch::Matchers::WithinAbs(50.0, 1e-12));
    REQUIRE_THAT(outcome.raw_aggregate[0], Catch::Matchers::WithinAbs((0.02 + 50.0) / 3.0, 1e-12));
    // the applied step used only the two small updates
    REQUIRE_THAT(fx.state.global_params[0] - start[0], Catch::Matchers::WithinAbs(0.01, 1e-15));
}

TEST_CASE("a short honest run learns the synthetic task") {
    auto cfg = tiny_config("learns");
    cfg.num_rounds = 25;
    RunOptions opts;
    opts.write_outputs = false;
    const auto result = run_experiment(cfg, opts);
    REQUIRE(result.records.size() == 25);
    REQUIRE(result.records.back().overall_accuracy >= 80.0);
    REQUIRE(result.attack_audit.empty());
    for (const auto& r : result.records) REQUIRE(!r.attack_active);
    // resolved fields were written back
    REQUIRE(result.config.samples_per_client == 42);  // 128-row train pool / 3 clients
    REQUIRE(result.config.unfair_set_size > 0);
}

TEST_CASE("identical configs produce byte-identical outputs") {
    const auto dir_a = temp_dir("det_a");
    const auto dir_b = temp_dir("det_b");
    auto cfg = tiny_attacked("det", 2);
    RunOptions quiet;

    cfg.output_dir = dir_a;
    const auto a = run_experiment(cfg, quiet);
    cfg.output_dir = dir_b;
    const auto b = run_experiment(cfg, quiet);

    REQUIRE(slurp(a.csv_path) == slurp(b.csv_path));
    REQUIRE(slurp(a.report_path) == slurp(b.report_path));

    auto reseeded = cfg;
    reseeded.seed = cfg.seed + 1;
    reseeded.output_dir = temp_dir("det_c");
    const auto c = run_experiment(reseeded, quiet);
    REQUIRE(slurp(a.csv_path) != slurp(c.csv_path));
}

TEST_CASE("an attack window beyond the horizon reproduces the honest trajectory") {
    auto near = tiny_attacked("gate", 50);   // 6 rounds, so never reached
    auto far = tiny_attacked("gate", 5000);  // same trajectory regardless of the distance
    near.output_dir = temp_dir("gate_near");
    far.output_dir = temp_dir("gate_far");

    const auto a = run_experiment(near, {});
    const auto b = run_experiment(far, {});
    REQUIRE(slurp(a.csv_path) == slurp(b.csv_path));
    REQUIRE(a.attack_audit.empty());
    for (const auto& r : a.records) REQUIRE(!r.attack_active);
}

TEST_CASE("attacked rounds satisfy the aggregation identity") {
    auto cfg = tiny_attacked("identity", 2);
    cfg.num_rounds = 8;
    RunOptions opts;
    opts.write_outputs = false;
    const auto result = run_experiment(cfg, opts);

    REQUIRE(result.attack_audit.size() == 6);  // rounds 2..7
    for (const auto& audit : result.attack_audit) {
        REQUIRE(audit.round >= 2);
        REQUIRE(std::isfinite(audit.identity_residual_inf));
        REQUIRE(audit.identity_residual_inf <= 1e-9);
        REQUIRE(audit.malicious_raw_norm >= audit.malicious_shipped_norm);
        REQUIRE(audit.median_honest_norm > 0.0);
        REQUIRE(audit.mean_prediction_rel_error >= 0.0);
    }
    for (const auto& r : result.records) {
        REQUIRE(r.attack_active == (r.round >= 2));
    }
    // the attacker's estimates resolved to the real roster
    REQUIRE(result.config.attack->estimated_honest_clients == 4);
    REQUIRE(result.config.attack->estimated_count_per_client == result.config.samples_per_client);
}

TEST_CASE("adaptive clipping acts on the attacked rounds") {
    auto cfg = tiny_attacked("clipped", 2);
    cfg.num_rounds = 5;
    cfg.defense.kind = DefensePolicy::Kind::clip_adaptive_median;
    RunOptions opts;
    opts.write_outputs = false;
    const auto result = run_experiment(cfg, opts);

    bool clipped_any = false;
    for (const auto& r : result.records) {
        if (r.round >= 2) {
            for (const auto& action : r.defense_actions) {
                clipped_any |= action.kind == DefenseAction::Kind::clipped;
            }
        }
    }
    REQUIRE(clipped_any);
}

TEST_CASE("experiment outputs land under the configured directory") {
    const auto dir = temp_dir("outputs");
    auto cfg = tiny_attacked("outputs", 1);
    cfg.num_rounds = 3;
    cfg.output_dir = dir;
    const auto result = run_experiment(cfg, {});

    REQUIRE(std::filesystem::exists(dir / "rounds.csv"));
    REQUIRE(std::filesystem::exists(dir / "report.txt"));
    REQUIRE(std::filesystem::exists(dir / "config_resolved.json"));
    REQUIRE_THAT(result.report_text, Catch::Matchers::ContainsSubstring("<- target"));
    REQUIRE_THAT(result.report_text, Catch::Matchers::ContainsSubstring("attack window: rounds 1..2"));

    // the resolved config re-parses and contains the filled-in estimates
    const auto resolved = parse_config(dir / "config_resolved.json");
    REQUIRE(resolved.attack->estimated_honest_clients == 4);
    REQUIRE(resolved.attack->estimated_count_per_client > 0);
    REQUIRE(resolved.samples_per_client > 0);

    const auto rows = read_round_csv(dir / "rounds.csv");
    REQUIRE(rows.size() == 3);
    REQUIRE(!rows[0].attack_active);
    REQUIRE(rows[1].attack_active);
}

TEST_CASE("config errors surface before any training starts") {
    auto mismatch = tiny_config("bad");
    mismatch.num_malicious = 1;  // no attack section
    mismatch.num_clients = 5;
    REQUIRE_THROWS_WITH(run_experiment(mismatch, {}),
                        Catch::Matchers::ContainsSubstring("needs an attack section"));

    auto majority = tiny_attacked("bad", 0);
    majority.num_clients = 2;
    REQUIRE_THROWS_WITH(run_experiment(majority, {}),
                        Catch::Matchers::ContainsSubstring("non-majority"));

    auto hungry = tiny_config("bad");
    hungry.samples_per_client = 100000;
    REQUIRE_THROWS_WITH(run_experiment(hungry, {}), Catch::Matchers::ContainsSubstring("pool has"));

    auto missing_csv = tiny_config("bad");
    missing_csv.data.source = DataConfig::Source::csv;
    missing_csv.data.csv_path = "nowhere/pool.csv";
    REQUIRE_THROWS_WITH(run_experiment(missing_csv, {}),
                        Catch::Matchers::ContainsSubstring("cannot open"));
}

TEST_CASE("a suite runs its scenarios and renders one table") {
    auto baseline = tiny_config("baseline");
    baseline.num_rounds = 4;
    auto attacked = tiny_attacked("attacked", 0);
    attacked.num_rounds = 4;

    const auto base_dir = temp_dir("suite");
    const auto suite = run_scenario_suite({baseline, attacked}, base_dir, {});
    REQUIRE(suite.all_ok);
    REQUIRE(suite.scenarios.size() == 2);
    REQUIRE(suite.scenarios[0].ok);
    REQUIRE(suite.scenarios[1].ok);
    REQUIRE_THAT(suite.table_text, Catch::Matchers::ContainsSubstring("baseline"));
    REQUIRE_THAT(suite.table_text, Catch::Matchers::ContainsSubstring("attacked"));
    REQUIRE_THAT(suite.table_text, Catch::Matchers::ContainsSubstring("clients"));
    REQUIRE_THAT(suite.table_text, Catch::Matchers::ContainsSubstring("target"));
    REQUIRE(std::filesystem::exists(base_dir / "suite_table.txt"));
    REQUIRE(slurp(base_dir / "suite_table.txt") == suite.table_text);
    // one directory per scenario
    REQUIRE(std::filesystem::exists(base_dir / "baseline_3c" / "rounds.csv"));
    REQUIRE(std::filesystem::exists(base_dir / "attacked_5c" / "rounds.csv"));

    // rerunning yields the identical table
    const auto again = run_scenario_suite({baseline, attacked}, temp_dir("suite_again"), {});
    REQUIRE(again.table_text == suite.table_text);
}

TEST_CASE("a failing scenario is reported without stopping the rest") {
    auto good = tiny_config("good");
    good.num_rounds = 3;
    auto bad = tiny_config("bad");
    bad.num_rounds = 3;
    bad.samples_per_client = 100000;  // partition cannot satisfy this

    const auto suite = run_scenario_suite({bad, good}, temp_dir("suite_fail"), {});
    REQUIRE(!suite.all_ok);
    REQUIRE(!suite.scenarios[0].ok);
    REQUIRE(suite.scenarios[1].ok);
    REQUIRE_THAT(suite.table_text, Catch::Matchers::ContainsSubstring("failed"));
    REQUIRE_THAT(suite.table_text, Catch::Matchers::ContainsSubstring("failures:"));
    REQUIRE_THAT(suite.scenarios[0].error, Catch::Matchers::ContainsSubstring("pool has"));
}

TEST_CASE("suites insist on comparable scenarios") {
    auto a = tiny_config("a");
    auto b = tiny_config("b");
    b.model.input_dim = 16;
    REQUIRE_THROWS_WITH(run_scenario_suite({a, b}, temp_dir("suite_mix"), {}),
                        Catch::Matchers::ContainsSubstring("model.input_dim"));

    auto twin = tiny_config("a");
    REQUIRE_THROWS_WITH(run_scenario_suite({a, twin}, temp_dir("suite_dup"), {}),
                        Catch::Matchers::ContainsSubstring("appears twice"));

    REQUIRE_THROWS_WITH(run_scenario_suite({}, temp_dir("suite_empty"), {}),
                        Catch::Matchers::ContainsSubstring("no scenarios"));
}
