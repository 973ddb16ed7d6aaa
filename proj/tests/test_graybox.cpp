#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "thermocast/graybox.hpp"
#include "thermocast/simulator.hpp"
#include "joint_oracle.hpp"

using namespace thermocast;
using namespace thermocast::graybox;
using oracle::JointOracle;
using oracle::random_chain;

namespace {

SiteMeta site() {
    SiteMeta s;
    s.latitude = 61.0;
    s.longitude = 25.0;
    s.utc_offset_hours = 2;
    return s;
}

sim::SimConfig reference_config(std::uint64_t seed) {
    auto cfg = sim::default_config(seed);
    cfg.theta1 = 0.02;
    cfg.theta2 = 0.04;
    cfg.theta3 = 0.0005;
    return cfg;
}

}  // namespace

TEST_CASE("filter and smoother match dense Gaussian conditioning", "[graybox]") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + static_cast<std::size_t>(trial % 7);
        const ScalarChain chain = random_chain(rng, n, trial % 2 == 1);
        const JointOracle oracle(chain);
        const FilterResult f = filter(chain);
        for (std::size_t t = 0; t < n; ++t) {
            const auto [m, c] = oracle.condition(chain, t);
            const auto ti = static_cast<Eigen::Index>(t);
            CHECK(f.filtered[t].mean == Catch::Approx(m(ti)).margin(1e-10));
            CHECK(f.filtered[t].variance == Catch::Approx(c(ti, ti)).margin(1e-10));
        }
        double ll = 0.0;
        const auto [m, c] = oracle.condition(chain, n - 1, &ll);
        if (chain.evidence.empty()) CHECK(f.log_likelihood == Catch::Approx(ll).margin(1e-9));
        const SmootherResult s = smooth(f, chain.transition);
        for (std::size_t t = 0; t < n; ++t) {
            const auto ti = static_cast<Eigen::Index>(t);
            CHECK(s.smoothed[t].mean == Catch::Approx(m(ti)).margin(1e-10));
            CHECK(s.smoothed[t].variance == Catch::Approx(c(ti, ti)).margin(1e-10));
            if (t + 1 < n) CHECK(s.lag_one[t] == Catch::Approx(c(ti, ti + 1)).margin(1e-10));
        }
    }
}

TEST_CASE("kalman_filter builds the chain from point parameters", "[graybox]") {
    PointParams p;
    p.theta1 = 0.02;
    p.theta2 = 0.04;
    p.theta3 = 0.0005;
    p.profile.fill(0.01);
    p.process_variance = 0.01;
    p.observation_variance = 0.0025;
    std::vector<InputRow> rows(4);
    for (std::size_t t = 0; t < rows.size(); ++t) rows[t] = {{}, 40.0, -5.0, 100.0 * t, 0, 0, 1 + static_cast<int>(t)};
    std::vector<std::optional<double>> obs = {21.0, std::nullopt, 21.2, 21.1};
    const auto f = kalman_filter(obs, rows, p, {21.0, 1.0});
    // missing observation: filtered equals predicted
    CHECK(f.filtered[1].mean == f.predicted[1].mean);
    CHECK(f.predicted[1].mean == Catch::Approx(0.94 * f.filtered[0].mean + 0.02 * 40 - 0.04 * 5 + 0.05 + 0.01));
    p.theta1 = 2.5;
    CHECK_THROWS_AS(kalman_filter(obs, rows, p), DomainError);
}

TEST_CASE("variational fit: ELBO is non-decreasing and bookkeeping holds", "[graybox]") {
    const auto data = sim::simulate_building(reference_config(5), site(), 24 * 60);
    FitOptions opts;
    opts.max_iters = 60;
    const auto post = fit_variational(data, opts);
    REQUIRE(post.elbo_trace.size() >= 2);
    for (std::size_t k = 1; k < post.elbo_trace.size(); ++k)
        CHECK(post.elbo_trace[k] >= post.elbo_trace[k - 1] - 1e-6 * std::abs(post.elbo_trace[k - 1]));
    const double a0 = opts.priors.gamma_shape;
    const auto n = static_cast<double>(data.size());
    CHECK(post.observation_precision.shape == Catch::Approx(a0 + n / 2.0));
    CHECK(post.process_precision.shape == Catch::Approx(a0 + (n - 1.0 - data.gap_count()) / 2.0));
    for (const auto& g : post.ard) CHECK(g.shape == Catch::Approx(a0 + 0.5));
    CHECK(post.rows == data.size());
    // 60 days already pin down the supply and outdoor couplings
    CHECK(post.coeffs[0].mean == Catch::Approx(0.02).margin(0.01));
    CHECK(post.coeffs[1].mean == Catch::Approx(0.04).margin(0.015));
}

TEST_CASE("infinite tolerance stops after one iteration", "[graybox]") {
    const auto data = sim::simulate_building(reference_config(6), site(), 24 * 10);
    FitOptions opts;
    opts.tol = std::numeric_limits<double>::infinity();
    const auto post = fit_variational(data, opts);
    CHECK(post.iterations == 1);
    CHECK(post.elbo_trace.size() == 1);
    CHECK(post.converged);
}

TEST_CASE("noise-free data drive the observation precision up", "[graybox]") {
    auto cfg = reference_config(8);
    cfg.obs_std = 0.0;
    cfg.process_std = 0.0;
    FitOptions opts;
    opts.max_iters = 40;
    opts.tol = 0.0;
    const auto post = fit_variational(sim::simulate_building(cfg, site(), 24 * 30), opts);
    const auto& trace = post.observation_precision_trace;
    REQUIRE(trace.size() == 40);
    for (std::size_t k = 1; k < trace.size(); ++k) CHECK(trace[k] > trace[k - 1]);
}

TEST_CASE("scalar filter corner cases", "[graybox]") {
    ScalarChain c;
    c.transition = 0.5;
    c.process_variance = 1.0;
    c.initial = {0.0, 1.0};
    c.drive = {0.0};
    c.observations = {1.0};
    c.observation_variance = 1.0;
    auto f = filter(c);
    CHECK(f.filtered[0].mean == Catch::Approx(0.5));
    CHECK(f.filtered[0].variance == Catch::Approx(0.5));
    auto s = smooth(f, c.transition);
    CHECK(s.smoothed[0].mean == f.filtered[0].mean);
    CHECK(s.lag_one.empty());

    c.drive = {0.0, 1.0, -1.0};
    c.observations = {std::nullopt, std::nullopt, std::nullopt};
    f = filter(c);
    for (std::size_t t = 0; t < 3; ++t) {
        CHECK(f.filtered[t].mean == f.predicted[t].mean);
        CHECK(f.filtered[t].variance == f.predicted[t].variance);
    }
    CHECK(f.log_likelihood == 0.0);

    c.observations = {1.0, 2.0, 0.5};
    c.process_variance = 0.0;
    c.initial.variance = 0.0;
    CHECK_THROWS_AS(filter(c), NumericalError);
}

TEST_CASE("smoother never widens the filtered marginal", "[graybox][property]") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const auto chain = random_chain(rng, 10, false);
        const auto f = filter(chain);
        const auto s = smooth(f, chain.transition);
        for (std::size_t t = 0; t < 10; ++t) CHECK(s.smoothed[t].variance <= f.filtered[t].variance + 1e-12);
        CHECK(s.smoothed.back().mean == f.filtered.back().mean);
    }
}

TEST_CASE("posterior predictive covers the training data", "[graybox][property]") {
    const auto data = sim::simulate_building(reference_config(12), site(), 24 * 60);
    FitOptions opts;
    opts.max_iters = 60;
    const auto post = fit_variational(data, opts);
    const auto p = post.expected();
    std::size_t inside = 0;
    for (std::size_t t = 0; t < data.size(); ++t) {
        const double sd = std::sqrt(post.state[t].variance + p.observation_variance);
        inside += std::abs(data.records()[t].t_in - post.state[t].mean) <= 3.0 * sd;
    }
    CHECK(static_cast<double>(inside) >= 0.9 * static_cast<double>(data.size()));
}

TEST_CASE("forecast recurrence and fixed point", "[graybox]") {
    GrayboxPosterior post;
    post.coeffs[0].mean = 0.02;
    post.coeffs[1].mean = 0.04;
    post.coeffs[2].mean = 0.0005;
    post.coeffs[3 + 4].mean = 0.03;
    post.process_precision = {1e12, 1.0};
    post.observation_precision = {1e12, 1.0};
    InputRow in{{}, 40.0, -2.0, 150.0, 0, 0, 5};
    const auto one = forecast(post, {21.0, 0.0}, std::vector<InputRow>{in});
    CHECK(one.mean[0] == Catch::Approx(0.94 * 21.0 + 0.8 - 0.08 + 0.075 + 0.03).epsilon(1e-12));
    const std::vector<InputRow> flat(2000, in);
    const auto longrun = forecast(post, {21.0, 0.0}, flat);
    const double fixed = (0.8 - 0.08 + 0.075 + 0.03) / 0.06;
    CHECK(longrun.mean.back() == Catch::Approx(fixed).epsilon(1e-9));
}

TEST_CASE("too few rows", "[graybox]") {
    const auto data = sim::simulate_building(reference_config(1), site(), 50);
    CHECK_THROWS_AS(fit_variational(data), InsufficientDataError);
}

TEST_CASE("forecast spread grows with the horizon", "[graybox][property]") {
    const auto data = sim::simulate_building(reference_config(9), site(), 24 * 20);
    FitOptions opts;
    opts.max_iters = 20;
    const auto post = fit_variational(data, opts);
    const auto records = data.records();
    const auto solar = make_solar_provider(site().latitude, site().longitude);
    const auto state = filter_state(post, records.first(300), site());
    const auto future = make_input_rows(records.subspan(300, 48), site(), solar);
    const auto fc = forecast(post, state, future);
    REQUIRE(fc.horizon() == 48);
    for (std::size_t k = 1; k < 48; ++k) {
        CHECK(fc.step_std[k] >= fc.step_std[k - 1]);
        CHECK(fc.cum_std[k] == Catch::Approx(fc.cum_std[k - 1] + fc.step_std[k]));
    }
    const auto one = forecast(post, state, std::span(future).first(1));
    CHECK(one.mean[0] == fc.mean[0]);
    CHECK(std::abs(one.mean[0] - records[300].t_in) < 0.5);
    CHECK_THROWS_AS(forecast(post, state, std::span<const InputRow>{}), ConfigError);
}

TEST_CASE("checkpoint JSON round trip", "[graybox]") {
    const auto data = sim::simulate_building(reference_config(2), site(), 24 * 10);
    FitOptions opts;
    opts.max_iters = 5;
    const auto post = fit_variational(data, opts);
    const auto back = from_json(nlohmann::json::parse(to_json(post).dump()));
    CHECK(back.coeffs[5].mean == post.coeffs[5].mean);
    CHECK(back.coeff_cov(3, 7) == post.coeff_cov(3, 7));
    CHECK(back.process_precision.rate == post.process_precision.rate);
    CHECK(back.elbo_trace == post.elbo_trace);
    CHECK(back.state.back().mean == post.state.back().mean);
    auto bad = to_json(post);
    bad["format_version"] = 99;
    CHECK_THROWS_AS(from_json(bad), ConfigError);
}
