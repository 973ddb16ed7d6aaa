#include <catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "thermocast/io.hpp"
#include "thermocast/simulator.hpp"

using namespace thermocast;

namespace {

SiteMeta site() {
    SiteMeta s;
    s.latitude = 61.0;
    s.longitude = 25.0;
    s.utc_offset_hours = 2;
    return s;
}

sim::SimConfig noiseless(std::uint64_t seed = 3) {
    auto cfg = sim::default_config(seed);
    cfg.process_std = 0.0;
    cfg.obs_std = 0.0;
    return cfg;
}

}  // namespace

TEST_CASE("constant inputs converge to the analytic fixed point", "[sim]") {
    auto cfg = noiseless();
    cfg.theta1 = 0.02;
    cfg.theta2 = 0.04;
    cfg.profile.fill(0.0);
    cfg.t_out_mean = 0.0;
    cfg.t_out_annual_amplitude = 0.0;
    cfg.t_out_daily_amplitude = 0.0;
    cfg.weather_noise_std = 0.0;
    cfg.transmittance = 0.0;
    cfg.heating_curve_offset = 60.0;
    cfg.heating_curve_slope = 0.0;
    cfg.supply_noise_std = 0.0;
    cfg.initial_t_in = 5.0;
    const auto ds = sim::simulate_building(cfg, site(), 1500);
    for (const auto& r : ds.records()) {
        CHECK(r.t_sup == 60.0);
        CHECK(r.t_out == 0.0);
        CHECK(r.ghi == 0.0);
    }
    CHECK(std::abs(ds.records().back().t_in - 20.0) < 1e-10);
}

TEST_CASE("noiseless trajectories satisfy the recurrence", "[sim][property]") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto cfg = noiseless(seed);
        const auto s = site();
        const auto ds = sim::simulate_building(cfg, s, 2000);
        const auto solar = make_solar_provider(s.latitude, s.longitude);
        const auto recs = ds.records();
        for (std::size_t t = 1; t < recs.size(); ++t) {
            const double psi = cfg.profile[static_cast<std::size_t>(hour_of_week_index(recs[t].timestamp, s) - 1)];
            const double expect =
                (1.0 - cfg.theta1 - cfg.theta2) * recs[t - 1].t_in + cfg.theta1 * recs[t].t_sup +
                cfg.theta2 * recs[t].t_out + cfg.theta3 * recs[t].ghi + psi;
            REQUIRE(std::abs(expect - recs[t].t_in) < 1e-10);
        }
    }
}

TEST_CASE("irradiation is zero when the sun is down", "[sim][property]") {
    const auto s = site();
    const auto ds = sim::simulate_building(sim::default_config(5), s, 3000);
    const auto solar = make_solar_provider(s.latitude, s.longitude);
    std::size_t day_hours = 0;
    for (const auto& r : ds.records()) {
        if (solar(r.timestamp).elevation <= 0.0) CHECK(r.ghi == 0.0);
        else ++day_hours;
        CHECK(r.ghi >= 0.0);
        CHECK(r.t_sup >= 20.0);
        CHECK(r.t_sup <= 80.0);
    }
    CHECK(day_hours > 0);
}

TEST_CASE("bounded inputs give bounded trajectories", "[sim][property]") {
    auto cfg = noiseless(11);
    cfg.envelope_capacitance_factor = 24.0;
    cfg.orientation_deg = 200.0;
    const auto ds = sim::simulate_building(cfg, site(), 5000);
    double max_sup = 0, max_out = 0, max_ghi = 0, max_psi = 0;
    for (const auto& r : ds.records()) {
        max_sup = std::max(max_sup, std::abs(r.t_sup));
        max_out = std::max(max_out, std::abs(r.t_out));
        max_ghi = std::max(max_ghi, r.ghi);
    }
    for (double p : cfg.profile) max_psi = std::max(max_psi, std::abs(p));
    // the envelope temperature is a convex combination of past t_out values
    const double drive = cfg.theta1 * max_sup + cfg.theta2 * max_out + cfg.theta3 * 1.7 * max_ghi + max_psi;
    const double bound = std::max(std::abs(cfg.initial_t_in), drive / (cfg.theta1 + cfg.theta2));
    for (const auto& r : ds.records()) CHECK(std::abs(r.t_in) <= bound + 1e-9);
}

TEST_CASE("same seed gives byte-identical datasets", "[sim]") {
    const auto cfg = sim::default_config(42);
    std::ostringstream a, b;
    io::write_records_csv(a, sim::simulate_building(cfg, site(), 800).records());
    io::write_records_csv(b, sim::simulate_building(cfg, site(), 800).records());
    CHECK(a.str() == b.str());
    auto other = cfg;
    other.seed = 43;
    std::ostringstream c;
    io::write_records_csv(c, sim::simulate_building(other, site(), 800).records());
    CHECK(a.str() != c.str());
}

TEST_CASE("envelope lag changes the trajectory", "[sim]") {
    auto cfg = noiseless(4);
    const auto plain = sim::simulate_building(cfg, site(), 500);
    cfg.envelope_capacitance_factor = 12.0;
    const auto lagged = sim::simulate_building(cfg, site(), 500);
    double diff = 0.0;
    for (std::size_t i = 0; i < plain.size(); ++i)
        diff = std::max(diff, std::abs(plain.records()[i].t_in - lagged.records()[i].t_in));
    CHECK(diff > 0.1);
}

TEST_CASE("config validation", "[sim]") {
    auto cfg = sim::default_config(1);
    cfg.theta1 = 0.7;
    cfg.theta2 = 0.4;
    CHECK_THROWS_AS(sim::simulate_building(cfg, site(), 10), ConfigError);
    cfg = sim::default_config(1);
    cfg.obs_std = -1;
    CHECK_THROWS_AS(sim::simulate_building(cfg, site(), 10), ConfigError);
    cfg = sim::default_config(1);
    CHECK_THROWS_AS(sim::simulate_building(cfg, site(), 0), ConfigError);
}

TEST_CASE("config JSON round trip", "[sim]") {
    auto cfg = sim::default_config(9);
    cfg.orientation_deg = 135.0;
    const auto j = sim::config_to_json(cfg);
    const auto back = sim::config_from_json(j, sim::SimConfig{});
    CHECK(sim::config_to_json(back) == j);
    CHECK_THROWS_AS(sim::config_from_json(nlohmann::json{{"bogus", 1}}, cfg), ConfigError);
}

TEST_CASE("default profile lies in [0, 0.05]", "[sim]") {
    const auto cfg = sim::default_config(77);
    for (double p : cfg.profile) {
        CHECK(p >= 0.0);
        CHECK(p <= 0.05);
    }
}
