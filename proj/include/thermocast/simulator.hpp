#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "thermocast/error.hpp"
#include "thermocast/solar.hpp"
#include "thermocast/timeseries.hpp"

namespace thermocast::sim {

inline constexpr double kSolarConstant = 1361.0;  // W/m^2

/// Ground-truth building and weather parameters for synthetic datasets.
struct SimConfig {
    // first-order thermal model
    double theta1 = 0.03;     // supply coupling, 1/h
    double theta2 = 0.035;    // envelope coupling, 1/h
    double theta3 = 0.0005;   // solar gain, degC m^2 / (W h)
    std::array<double, 48> profile{};  // internal gains per hour-of-week slot, degC/h
    double process_std = 0.05;
    double obs_std = 0.05;
    double initial_t_in = 21.0;

    // model mismatch
    double envelope_capacitance_factor = 0.0;  // envelope lag in hours, 0 disables
    std::optional<double> orientation_deg;     // facade azimuth for directional solar gain

    // outdoor temperature: seasonal + diurnal sinusoids + AR(1) weather
    double t_out_mean = 4.0;
    double t_out_annual_amplitude = 9.0;
    int coldest_day_of_year = 20;
    double t_out_daily_amplitude = 2.5;
    double weather_ar = 0.97;
    double weather_noise_std = 0.5;

    // irradiation: clear sky * cloud factor
    double transmittance = 0.7;
    double cloud_mean = 0.55;
    double cloud_ar = 0.9;
    double cloud_noise_std = 0.15;

    // heating curve t_sup = clamp(a - b * t_out + noise, 20, 80)
    double heating_curve_offset = 45.0;
    double heating_curve_slope = 1.2;
    double supply_ar = 0.9;
    double supply_noise_std = 1.0;

    std::chrono::year_month_day season_start{std::chrono::year{2020} / 9 / 1};
    std::chrono::year_month_day season_end{std::chrono::year{2021} / 5 / 31};
    std::uint64_t seed = 1;

    void validate() const {
        if (!(theta1 > 0.0 && theta2 > 0.0 && theta1 + theta2 < 1.0))
            throw ConfigError("theta1, theta2 must be positive with theta1 + theta2 < 1");
        if (!(process_std >= 0.0 && obs_std >= 0.0)) throw ConfigError("noise standard deviations must be >= 0");
        if (!(envelope_capacitance_factor >= 0.0)) throw ConfigError("envelope_capacitance_factor must be >= 0");
        if (!(transmittance >= 0.0 && transmittance <= 1.0)) throw ConfigError("transmittance must lie in [0, 1]");
        if (!(cloud_mean >= 0.0 && cloud_mean <= 1.0)) throw ConfigError("cloud_mean must lie in [0, 1]");
        if (weather_noise_std < 0.0 || cloud_noise_std < 0.0 || supply_noise_std < 0.0)
            throw ConfigError("weather noise levels must be >= 0");
        if (!season_start.ok() || !season_end.ok() || std::chrono::sys_days{season_end} < std::chrono::sys_days{season_start})
            throw ConfigError("invalid season dates");
        for (double p : profile)
            if (!std::isfinite(p)) throw ConfigError("profile contains a non-finite value");
    }
};

/// Defaults with a profile drawn uniformly from [0, 0.05] degC/h using `seed`.
inline SimConfig default_config(std::uint64_t seed) {
    SimConfig cfg;
    cfg.seed = seed;
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> u(0.0, 0.05);
    for (auto& p : cfg.profile) p = u(rng);
    return cfg;
}

/// Multiplier on ghi for a facade facing `orientation_deg`; 1 when isotropic.
inline double solar_gain_factor(const SimConfig& cfg, const SolarPosition& sun) {
    if (!cfg.orientation_deg) return 1.0;
    const double rel = (sun.azimuth - *cfg.orientation_deg) * solar::kDeg;
    return 0.3 + 1.4 * std::max(0.0, std::cos(rel));
}

/// One step of the indoor recurrence. `outdoor` is the outdoor temperature as
/// seen by the envelope (equal to t_out when the envelope lag is off).
inline double transition(const SimConfig& cfg, double prev, double t_sup, double outdoor, double solar_gain,
                         double psi) {
    return (1.0 - cfg.theta1 - cfg.theta2) * prev + cfg.theta1 * t_sup + cfg.theta2 * outdoor + cfg.theta3 * solar_gain +
           psi;
}

/// Hourly synthetic dataset of `hours` steps starting at season_start 00:00 UTC
/// (truncated at the end of season_end). Deterministic for a fixed seed.
inline BuildingDataset simulate_building(const SimConfig& cfg, const SiteMeta& site, std::size_t hours) {
    cfg.validate();
    site.validate();
    if (hours < 1) throw ConfigError("hours must be >= 1");
    using namespace std::chrono;

    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const auto start = sys_days{cfg.season_start};
    const auto stop = sys_days{cfg.season_end} + days{1};
    const auto solar = make_solar_provider(site.latitude, site.longitude);

    std::vector<HourlyRecord> records;
    records.reserve(hours);
    double weather = 0.0, cloud = 0.0, supply = 0.0;
    double state = cfg.initial_t_in;
    double envelope = 0.0;
    const double env_rate = 1.0 / (1.0 + cfg.envelope_capacitance_factor);

    for (std::size_t i = 0; i < hours; ++i) {
        const Instant t = Instant{start} + Hours{static_cast<long>(i)};
        if (t >= stop) break;
        const auto local = site.to_local(t);
        const double local_hour = static_cast<double>(floor<Hours>(local - floor<days>(local)).count());
        const double doy = static_cast<double>(day_of_year(t));

        weather = cfg.weather_ar * weather + cfg.weather_noise_std * gauss(rng);
        cloud = cfg.cloud_ar * cloud + cfg.cloud_noise_std * gauss(rng);
        supply = cfg.supply_ar * supply + cfg.supply_noise_std * gauss(rng);
        const double eps_p = cfg.process_std * gauss(rng);
        const double eps_o = cfg.obs_std * gauss(rng);

        const double t_out = cfg.t_out_mean -
                             cfg.t_out_annual_amplitude *
                                 std::cos(2.0 * std::numbers::pi * (doy - cfg.coldest_day_of_year) / 365.25) +
                             cfg.t_out_daily_amplitude * std::cos(2.0 * std::numbers::pi * (local_hour - 15.0) / 24.0) +
                             weather;
        const SolarPosition sun = solar(t);
        const double cloud_factor = std::clamp(cfg.cloud_mean + cloud, 0.0, 1.0);
        const double ghi =
            sun.elevation > 0.0 ? kSolarConstant * cfg.transmittance * std::sin(sun.elevation * solar::kDeg) * cloud_factor
                                : 0.0;
        const double t_sup =
            std::clamp(cfg.heating_curve_offset - cfg.heating_curve_slope * t_out + supply, 20.0, 80.0);

        envelope = i == 0 ? t_out : envelope + env_rate * (t_out - envelope);
        const double outdoor = cfg.envelope_capacitance_factor > 0.0 ? envelope : t_out;
        if (i > 0) {
            const double psi = cfg.profile[static_cast<std::size_t>(hour_of_week_index(t, site) - 1)];
            state = transition(cfg, state, t_sup, outdoor, ghi * solar_gain_factor(cfg, sun), psi) + eps_p;
        }
        records.push_back({t, state + eps_o, t_sup, t_out, ghi});
    }
    return BuildingDataset(site, std::move(records));
}

inline nlohmann::json config_to_json(const SimConfig& cfg) {
    nlohmann::json j;
    j["theta1"] = cfg.theta1;
    j["theta2"] = cfg.theta2;
    j["theta3"] = cfg.theta3;
    j["profile"] = cfg.profile;
    j["process_std"] = cfg.process_std;
    j["obs_std"] = cfg.obs_std;
    j["initial_t_in"] = cfg.initial_t_in;
    j["envelope_capacitance_factor"] = cfg.envelope_capacitance_factor;
    j["orientation_deg"] = cfg.orientation_deg ? nlohmann::json(*cfg.orientation_deg) : nlohmann::json(nullptr);
    j["t_out_mean"] = cfg.t_out_mean;
    j["t_out_annual_amplitude"] = cfg.t_out_annual_amplitude;
    j["coldest_day_of_year"] = cfg.coldest_day_of_year;
    j["t_out_daily_amplitude"] = cfg.t_out_daily_amplitude;
    j["weather_ar"] = cfg.weather_ar;
    j["weather_noise_std"] = cfg.weather_noise_std;
    j["transmittance"] = cfg.transmittance;
    j["cloud_mean"] = cfg.cloud_mean;
    j["cloud_ar"] = cfg.cloud_ar;
    j["cloud_noise_std"] = cfg.cloud_noise_std;
    j["heating_curve_offset"] = cfg.heating_curve_offset;
    j["heating_curve_slope"] = cfg.heating_curve_slope;
    j["supply_ar"] = cfg.supply_ar;
    j["supply_noise_std"] = cfg.supply_noise_std;
    j["season_start"] = format_date(cfg.season_start);
    j["season_end"] = format_date(cfg.season_end);
    j["seed"] = cfg.seed;
    return j;
}

/// Overlays the keys present in `j` on `base`; unknown keys are rejected.
inline SimConfig config_from_json(const nlohmann::json& j, SimConfig base) {
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "theta1") base.theta1 = v.get<double>();
            else if (key == "theta2") base.theta2 = v.get<double>();
            else if (key == "theta3") base.theta3 = v.get<double>();
            else if (key == "profile") {
                if (v.size() != 48) throw ConfigError("profile must have 48 entries");
                for (std::size_t k = 0; k < 48; ++k) base.profile[k] = v[k].get<double>();
            }
            else if (key == "process_std") base.process_std = v.get<double>();
            else if (key == "obs_std") base.obs_std = v.get<double>();
            else if (key == "initial_t_in") base.initial_t_in = v.get<double>();
            else if (key == "envelope_capacitance_factor") base.envelope_capacitance_factor = v.get<double>();
            else if (key == "orientation_deg") {
                if (v.is_null()) base.orientation_deg.reset();
                else base.orientation_deg = v.get<double>();
            }
            else if (key == "t_out_mean") base.t_out_mean = v.get<double>();
            else if (key == "t_out_annual_amplitude") base.t_out_annual_amplitude = v.get<double>();
            else if (key == "coldest_day_of_year") base.coldest_day_of_year = v.get<int>();
            else if (key == "t_out_daily_amplitude") base.t_out_daily_amplitude = v.get<double>();
            else if (key == "weather_ar") base.weather_ar = v.get<double>();
            else if (key == "weather_noise_std") base.weather_noise_std = v.get<double>();
            else if (key == "transmittance") base.transmittance = v.get<double>();
            else if (key == "cloud_mean") base.cloud_mean = v.get<double>();
            else if (key == "cloud_ar") base.cloud_ar = v.get<double>();
            else if (key == "cloud_noise_std") base.cloud_noise_std = v.get<double>();
            else if (key == "heating_curve_offset") base.heating_curve_offset = v.get<double>();
            else if (key == "heating_curve_slope") base.heating_curve_slope = v.get<double>();
            else if (key == "supply_ar") base.supply_ar = v.get<double>();
            else if (key == "supply_noise_std") base.supply_noise_std = v.get<double>();
            else if (key == "season_start") base.season_start = parse_date(v.get<std::string>());
            else if (key == "season_end") base.season_end = parse_date(v.get<std::string>());
            else if (key == "seed") base.seed = v.get<std::uint64_t>();
            else throw ConfigError("unknown simulator key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("simulator config: ") + e.what());
    }
    base.validate();
    return base;
}

}  // namespace thermocast::sim
