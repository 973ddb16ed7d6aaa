#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include "thermocast/config.hpp"
#include "thermocast/experiment.hpp"
#include "thermocast/simulator.hpp"

using namespace thermocast;
using namespace thermocast::experiment;

namespace {

SiteMeta site() { return {47.4, 8.5, 1, {}}; }

sim::SimConfig quiet_config(std::uint64_t seed) {
    auto cfg = sim::default_config(seed);
    cfg.process_std = 0.0;
    cfg.obs_std = 0.0;
    return cfg;
}

EvalSettings small_settings() {
    EvalSettings s;
    s.test_instants = 6;
    s.horizon = 12;
    s.k_list = {1, 6, 12};
    s.n_samples = 3;
    s.uq_samples = 5;
    s.uq_bins = 2;
    return s;
}

nn::TrainConfig tiny_train() {
    nn::TrainConfig c;
    c.epochs = 12;
    c.hidden = 4;
    c.learning_rate = 3e-3;
    return c;
}

graybox::GrayboxPosterior true_posterior(const sim::SimConfig& cfg) {
    graybox::GrayboxPosterior post;
    post.coeffs[0].mean = cfg.theta1;
    post.coeffs[1].mean = cfg.theta2;
    post.coeffs[2].mean = cfg.theta3;
    for (std::size_t k = 0; k < 48; ++k) post.coeffs[3 + k].mean = cfg.profile[k];
    post.process_precision = {1e12, 1.0};
    post.observation_precision = {1e12, 1.0};
    return post;
}

}  // namespace

TEST_CASE("prepare_building splits chronologically", "[experiment]") {
    const auto s = small_settings();
    const auto data = sim::simulate_building(sim::default_config(3), site(), 1200);
    const auto b = prepare_building("b", data, s);
    const auto records = b.dataset.records();
    const std::size_t cut = split_point(0.8, records.size());
    REQUIRE(b.train_data.size() == cut);
    CHECK(b.train_data.records().back().timestamp == records[cut - 1].timestamp);
    REQUIRE(b.origins.size() == s.test_instants);
    for (std::size_t o : b.origins) CHECK(o >= cut);
    // 9-to-1 split of the training windows
    const std::size_t n = b.train.size() + b.val.size();
    CHECK(b.train.size() == split_point(0.9, n));
    CHECK(b.val.index.front() > b.train.index.back());
    REQUIRE(b.truth.rows() == 6);
    REQUIRE(b.truth.cols() == 12);
    for (std::size_t i = 0; i < b.origins.size(); ++i)
        for (std::size_t j = 0; j < 12; ++j)
            CHECK(b.truth(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) == records[b.origins[i] + 1 + j].t_in);
}

TEST_CASE("graybox forecasts reproduce a noise-free simulator", "[experiment]") {
    const auto cfg = quiet_config(5);
    const auto s = small_settings();
    const auto b = prepare_building("b", sim::simulate_building(cfg, site(), 1200), s);
    const auto run = make_run("graybox", b, forecast_graybox(true_posterior(cfg), b, s.horizon));
    CHECK(run.pred.rows() == b.truth.rows());
    CHECK((run.pred - run.truth).cwiseAbs().maxCoeff() < 1e-8);
    for (double d : run.drift) CHECK(d < 1e-8);
}

TEST_CASE("pooling stacks buildings row-wise", "[experiment]") {
    const auto s = small_settings();
    std::vector<ModelRun> runs;
    std::vector<PreparedBuilding> buildings;
    for (std::uint64_t seed : {1u, 2u}) {
        const auto cfg = quiet_config(seed);
        buildings.push_back(prepare_building("b" + std::to_string(seed), sim::simulate_building(cfg, site(), 1200), s));
        auto post = true_posterior(cfg);
        post.coeffs[0].mean *= 1.2;  // a deliberately wrong model, so errors are non-zero
        runs.push_back(make_run("graybox", buildings.back(), forecast_graybox(post, buildings.back(), s.horizon)));
    }
    const auto report = pool("graybox", runs, s);
    Matrix truth(12, 12), pred(12, 12);
    truth << runs[0].truth, runs[1].truth;
    pred << runs[0].pred, runs[1].pred;
    const auto drift = eval::drift_curve(truth, pred);
    for (std::size_t j = 0; j < 12; ++j) CHECK(report.drift[j] == Catch::Approx(drift[j]).epsilon(1e-14));
    for (std::size_t k : s.k_list) CHECK(report.rmse.at(k).median == eval::summarize(eval::horizon_rmse(truth, pred, k)).median);
    CHECK(report.scores.at("unweighted") == Catch::Approx(mean_of(drift)).epsilon(1e-12));
    CHECK_THROWS_AS(pool("lstm-mlp", runs, s), InsufficientDataError);
}

TEST_CASE("neural forecasts and one-hour uncertainty", "[experiment]") {
    const auto s = small_settings();
    const auto b = prepare_building("b", sim::simulate_building(sim::default_config(4), site(), 1200), s);
    const auto model = nn::train(nn::ModelKind::lstm_bnn, b.train, b.val, tiny_train());
    std::mt19937_64 rng(1);
    const auto f = forecast_neural(model, b, s.horizon, s.n_samples, rng);
    REQUIRE(f.size() == b.origins.size());
    for (const auto& r : f) {
        CHECK(r.horizon() == s.horizon);
        CHECK(r.n_samples == s.n_samples);
    }
    const auto uq = one_hour_uncertainty(model, b, s.uq_samples, rng);
    REQUIRE(uq.step_std.size() == b.origins.size());
    for (std::size_t i = 0; i < uq.step_std.size(); ++i) {
        CHECK(uq.step_std[i] > 0.0);
        CHECK(uq.abs_error[i] >= 0.0);
    }
}

TEST_CASE("prior sweep is deterministic and degenerates to one entry", "[experiment]") {
    const auto s = small_settings();
    std::vector<PreparedBuilding> buildings{
        prepare_building("b", sim::simulate_building(sim::default_config(6), site(), 1200), s)};
    const std::vector<double> one{1e-3};
    const std::vector<std::uint64_t> seeds{7};
    const auto a = prior_sweep(one, seeds, buildings, tiny_train(), s);
    const auto b = prior_sweep(one, seeds, buildings, tiny_train(), s);
    REQUIRE(a.size() == 1);
    CHECK(a[0].kl == b[0].kl);
    CHECK(a[0].rmse.at(12).median == b[0].rmse.at(12).median);
    CHECK(a[0].prior_variance == 1e-3);
    CHECK(std::isfinite(a[0].kl));
    const std::vector<double> none;
    CHECK_THROWS_AS(prior_sweep(none, seeds, buildings, tiny_train(), s), ConfigError);
}

TEST_CASE("evaluation settings validation", "[experiment]") {
    EvalSettings s;
    CHECK_NOTHROW(s.validate());
    s.k_list = {1, 49};
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = EvalSettings{};
    s.profiles = {"cubic"};
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = EvalSettings{};
    s.test_fraction = 1.0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("experiment config parsing", "[config]") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "thermocast_config_test";
    fs::create_directories(dir);
    const nlohmann::json j = {{"seed", 4},
                              {"simulation", {{"buildings", 3}, {"hours", 500}, {"overrides", {{"theta1", 0.025}}}}},
                              {"train", {{"epochs", 20}, {"hidden", 8}}},
                              {"evaluation", {{"horizon", 24}, {"k_list", {1, 24}}}},
                              {"models", {"graybox", "lstm-bnn"}}};
    const auto cfg = config::parse(j, dir);
    CHECK(cfg.seed == 4);
    CHECK(cfg.output_dir == dir / "out");
    CHECK(cfg.train.epochs == 20);
    CHECK(cfg.evaluation.horizon == 24);
    CHECK(cfg.simulation->building_config(2).theta1 == 0.025);
    CHECK(cfg.simulation->building_config(2).seed == 3);
    const auto ds = cfg.resolved_datasets();
    REQUIRE(ds.size() == 3);
    CHECK(ds[1].name == "building_01");
    CHECK(ds[1].csv == dir / "out" / "data" / "building_01.csv");
    CHECK(cfg.train_seed(1, "lstm-bnn") != cfg.train_seed(1, "lstm-mlp"));

    const auto round = config::parse(config::to_json(cfg), dir);
    CHECK(config::to_json(round) == config::to_json(cfg));

    CHECK_THROWS_AS(config::parse({{"colour", 1}}, dir), ConfigError);
    CHECK_THROWS_AS(config::parse({{"train", {{"epochs", "many"}}}}, dir), ConfigError);
    CHECK_THROWS_AS(config::parse({{"evaluation", {{"horizon", 4}}}}, dir), ConfigError);
    CHECK_THROWS_AS(config::parse({{"models", {"arima"}}}, dir), ConfigError);
    CHECK_THROWS_AS(config::parse({{"simulation", {{"overrides", {{"seed", 3}}}}}}, dir), ConfigError);
    CHECK_THROWS_AS(config::parse({{"simulation", {{"overrides", {{"theta1", 2.0}}}}}}, dir), ConfigError);
    CHECK_THROWS_AS(config::parse({{"datasets", {{{"name", "x"}, {"csv", "missing.csv"}}}}}, dir), ConfigError);
    CHECK_THROWS_AS(config::parse(nlohmann::json::object(), dir).resolved_datasets(), ConfigError);

    const fs::path file = dir / "cfg.json";
    std::ofstream(file) << j.dump();
    ::setenv(config::kOutputDirEnv, "/tmp/elsewhere", 1);
    CHECK(config::load(file).output_dir == fs::path("/tmp/elsewhere"));
    ::unsetenv(config::kOutputDirEnv);
    CHECK(config::load(file).output_dir == dir / "out");
}
