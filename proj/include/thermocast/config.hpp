#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "thermocast/error.hpp"
#include "thermocast/experiment.hpp"
#include "thermocast/graybox.hpp"
#include "thermocast/io.hpp"
#include "thermocast/neural.hpp"
#include "thermocast/simulator.hpp"

/// Experiment configuration files: one JSON document per experiment, with
/// relative paths resolved against the file's directory.
namespace thermocast::config {

inline constexpr const char* kOutputDirEnv = "THERMOCAST_OUTPUT_DIR";

struct DatasetEntry {
    std::string name;
    std::filesystem::path csv;
};

/// Synthetic buildings: building i uses default_config(seed + i) with
/// `overrides` laid on top.
struct SimulationSpec {
    std::size_t buildings = 1;
    std::size_t hours = 6552;
    std::uint64_t seed = 1;
    nlohmann::json overrides = nlohmann::json::object();

    sim::SimConfig building_config(std::size_t i) const {
        return sim::config_from_json(overrides, sim::default_config(seed + i));
    }
    static std::string building_name(std::size_t i) {
        std::string n = std::to_string(i);
        return "building_" + std::string(n.size() < 2 ? 2 - n.size() : 0, '0') + n;
    }
};

struct ExperimentConfig {
    std::filesystem::path base_dir = ".";
    std::filesystem::path output_dir = "out";
    std::uint64_t seed = 0;
    SiteMeta site{47.4, 8.5, 1, {}};
    std::vector<DatasetEntry> datasets;
    std::optional<SimulationSpec> simulation;
    std::vector<std::string> models{"graybox", "lstm-mlp", "lstm-bnn"};
    nn::TrainConfig train;
    graybox::FitOptions graybox;
    experiment::EvalSettings evaluation;
    std::vector<double> sweep_priors{1e-2, 1e-3, 1e-4};
    std::vector<std::uint64_t> sweep_seeds{0};

    std::filesystem::path data_dir() const { return output_dir / "data"; }
    std::filesystem::path checkpoint_dir() const { return output_dir / "checkpoints"; }

    /// Datasets listed explicitly, or the simulated buildings under data_dir().
    std::vector<DatasetEntry> resolved_datasets() const {
        if (!datasets.empty()) return datasets;
        if (!simulation) throw ConfigError("config lists no datasets and no simulation");
        std::vector<DatasetEntry> out;
        for (std::size_t i = 0; i < simulation->buildings; ++i) {
            const auto name = SimulationSpec::building_name(i);
            out.push_back({name, data_dir() / (name + ".csv")});
        }
        return out;
    }

    /// Per (building, model) training seed.
    std::uint64_t train_seed(std::size_t building, const std::string& model) const {
        std::uint64_t code = model == "lstm-mlp" ? 1 : model == "lstm-bnn" ? 2 : 0;
        return seed * 1000003ULL + building * 101ULL + code;
    }

    void validate() const {
        if (models.empty()) throw ConfigError("models must not be empty");
        for (const auto& m : models)
            if (m != "graybox" && m != "lstm-mlp" && m != "lstm-bnn") throw ConfigError("unknown model '" + m + "'");
        train.validate();
        evaluation.validate();
        site.validate();
        if (simulation && (simulation->buildings == 0 || simulation->hours == 0))
            throw ConfigError("simulation needs at least one building and one hour");
        if (sweep_priors.empty() || sweep_seeds.empty()) throw ConfigError("prior sweep needs priors and seeds");
        for (double p : sweep_priors)
            if (!(p > 0.0)) throw ConfigError("prior variances must be positive");
    }
};

namespace detail {

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

inline experiment::EvalSettings evaluation_from_json(const nlohmann::json& j, experiment::EvalSettings s) {
    for (const auto& [key, v] : j.items()) {
        if (key == "test_instants") s.test_instants = v.get<std::size_t>();
        else if (key == "horizon") s.horizon = v.get<std::size_t>();
        else if (key == "k_list") s.k_list = v.get<std::vector<std::size_t>>();
        else if (key == "profiles") s.profiles = v.get<std::vector<std::string>>();
        else if (key == "n_samples") s.n_samples = v.get<std::size_t>();
        else if (key == "uq_samples") s.uq_samples = v.get<std::size_t>();
        else if (key == "uq_bins") s.uq_bins = v.get<std::size_t>();
        else if (key == "test_fraction") s.test_fraction = v.get<double>();
        else if (key == "val_fraction") s.val_fraction = v.get<double>();
        else throw ConfigError("unknown evaluation option '" + key + "'");
    }
    return s;
}

inline graybox::FitOptions graybox_from_json(const nlohmann::json& j, graybox::FitOptions o) {
    for (const auto& [key, v] : j.items()) {
        if (key == "max_iters") o.max_iters = v.get<std::size_t>();
        else if (key == "tol") o.tol = v.get<double>();
        else if (key == "max_rows") o.max_rows = v.get<std::size_t>();
        else if (key == "min_rows") o.min_rows = v.get<std::size_t>();
        else if (key == "gamma_shape") o.priors.gamma_shape = v.get<double>();
        else if (key == "gamma_rate") o.priors.gamma_rate = v.get<double>();
        else if (key == "initial_state_variance") o.priors.initial_state_variance = v.get<double>();
        else throw ConfigError("unknown graybox option '" + key + "'");
    }
    if (o.max_iters == 0 || !(o.tol >= 0.0)) throw ConfigError("graybox max_iters must be >= 1 and tol >= 0");
    return o;
}

}  // namespace detail

/// Parses a config document; paths resolve against `base_dir`.
inline ExperimentConfig parse(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    ExperimentConfig cfg;
    cfg.base_dir = base_dir;
    try {
        if (!j.is_object()) throw ConfigError("config must be a JSON object");
        for (const auto& [key, v] : j.items()) {
            if (key == "output_dir") cfg.output_dir = detail::resolve(base_dir, v.get<std::string>());
            else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
            else if (key == "site") {
                cfg.site = v.is_string() ? io::read_site_json(detail::resolve(base_dir, v.get<std::string>()).string())
                                         : io::site_from_json(v);
            } else if (key == "datasets") {
                for (const auto& d : v) {
                    DatasetEntry e{d.at("name").get<std::string>(), detail::resolve(base_dir, d.at("csv").get<std::string>())};
                    if (!std::filesystem::exists(e.csv)) throw ConfigError("dataset '" + e.csv.string() + "' does not exist");
                    cfg.datasets.push_back(std::move(e));
                }
            } else if (key == "simulation") {
                SimulationSpec s;
                for (const auto& [sk, sv] : v.items()) {
                    if (sk == "buildings") s.buildings = sv.get<std::size_t>();
                    else if (sk == "hours") s.hours = sv.get<std::size_t>();
                    else if (sk == "seed") s.seed = sv.get<std::uint64_t>();
                    else if (sk == "overrides") {
                        if (sv.contains("seed")) throw ConfigError("simulation overrides must not set seed; use simulation.seed");
                        s.overrides = sv;
                    } else throw ConfigError("unknown simulation option '" + sk + "'");
                }
                s.building_config(0);  // reject invalid overrides at load time
                cfg.simulation = std::move(s);
            } else if (key == "models") cfg.models = v.get<std::vector<std::string>>();
            else if (key == "train") cfg.train = nn::config_from_json(v, cfg.train);
            else if (key == "graybox") cfg.graybox = detail::graybox_from_json(v, cfg.graybox);
            else if (key == "evaluation") cfg.evaluation = detail::evaluation_from_json(v, cfg.evaluation);
            else if (key == "prior_sweep") {
                for (const auto& [pk, pv] : v.items()) {
                    if (pk == "priors") cfg.sweep_priors = pv.get<std::vector<double>>();
                    else if (pk == "seeds") cfg.sweep_seeds = pv.get<std::vector<std::uint64_t>>();
                    else throw ConfigError("unknown prior_sweep option '" + pk + "'");
                }
            } else throw ConfigError("unknown config key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (!j.contains("output_dir")) cfg.output_dir = base_dir / cfg.output_dir;
    cfg.validate();
    return cfg;
}

/// Loads a config file; THERMOCAST_OUTPUT_DIR, when set, replaces output_dir.
inline ExperimentConfig load(const std::filesystem::path& path) {
    auto cfg = parse(io::read_json_file(path.string()), path.parent_path().empty() ? "." : path.parent_path());
    if (const char* env = std::getenv(kOutputDirEnv); env && *env) cfg.output_dir = env;
    return cfg;
}

/// Fully resolved settings, as recorded in run manifests.
inline nlohmann::json to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["output_dir"] = c.output_dir.generic_string();
    j["seed"] = c.seed;
    j["site"] = io::site_to_json(c.site);
    nlohmann::json ds = nlohmann::json::array();
    for (const auto& d : c.datasets) ds.push_back({{"name", d.name}, {"csv", d.csv.generic_string()}});
    j["datasets"] = ds;
    if (c.simulation)
        j["simulation"] = {{"buildings", c.simulation->buildings},
                           {"hours", c.simulation->hours},
                           {"seed", c.simulation->seed},
                           {"overrides", c.simulation->overrides}};
    j["models"] = c.models;
    j["train"] = nn::config_to_json(c.train);
    j["graybox"] = {{"max_iters", c.graybox.max_iters},
                    {"tol", c.graybox.tol},
                    {"max_rows", c.graybox.max_rows},
                    {"min_rows", c.graybox.min_rows},
                    {"gamma_shape", c.graybox.priors.gamma_shape},
                    {"gamma_rate", c.graybox.priors.gamma_rate},
                    {"initial_state_variance", c.graybox.priors.initial_state_variance}};
    const auto& e = c.evaluation;
    j["evaluation"] = {{"test_instants", e.test_instants}, {"horizon", e.horizon},       {"k_list", e.k_list},
                       {"profiles", e.profiles},           {"n_samples", e.n_samples},   {"uq_samples", e.uq_samples},
                       {"uq_bins", e.uq_bins},             {"test_fraction", e.test_fraction},
                       {"val_fraction", e.val_fraction}};
    j["prior_sweep"] = {{"priors", c.sweep_priors}, {"seeds", c.sweep_seeds}};
    return j;
}

}  // namespace thermocast::config
