#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "thermocast/error.hpp"
#include "thermocast/eval.hpp"
#include "thermocast/forecast.hpp"
#include "thermocast/graybox.hpp"
#include "thermocast/neural.hpp"
#include "thermocast/timeseries.hpp"

/// Multi-building evaluation: chronological splits, test-instant forecasts for
/// every model, pooled metrics and the prior-variance sweep.
namespace thermocast::experiment {

using eval::Matrix;

struct EvalSettings {
    std::size_t test_instants = 100;
    std::size_t horizon = 48;
    std::vector<std::size_t> k_list{1, 6, 48};
    std::vector<std::string> profiles{"unweighted", "linear", "sigmoid"};
    std::size_t n_samples = 10;    // trajectories behind the Bayesian predictive mean
    std::size_t uq_samples = 100;  // trajectories for the 1-hour uncertainty diagnostic
    std::size_t uq_bins = 10;
    double test_fraction = 0.2;
    double val_fraction = 0.1;

    void validate() const {
        if (test_instants == 0) throw ConfigError("test_instants must be >= 1");
        if (horizon == 0) throw ConfigError("horizon must be >= 1");
        if (k_list.empty()) throw ConfigError("k_list must not be empty");
        for (std::size_t k : k_list)
            if (k < 1 || k > horizon) throw ConfigError("every K must lie in [1, horizon]");
        for (const auto& p : profiles) eval::parse_profile(p);
        if (n_samples == 0 || uq_samples < 2) throw ConfigError("n_samples must be >= 1 and uq_samples >= 2");
        if (uq_bins < 2) throw ConfigError("uq_bins must be >= 2");
        if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must lie in (0, 1)");
        if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
    }
};

/// A building split into a training period (the earliest 1 - test_fraction of
/// its records) and a test period holding the forecast origins.
struct PreparedBuilding {
    std::string name;
    BuildingDataset dataset;
    BuildingDataset train_data;
    SupervisedSet train;
    SupervisedSet val;
    std::vector<std::size_t> origins;  // record indices in dataset
    Matrix truth;                      // origins x horizon, t_in at origin+1 .. origin+H
};

inline PreparedBuilding prepare_building(std::string name, BuildingDataset dataset, const EvalSettings& s) {
    s.validate();
    const auto records = dataset.records();
    if (records.empty()) throw EmptyDatasetError("building '" + name + "' has no heating-season records");
    const std::size_t cut = split_point(1.0 - s.test_fraction, records.size());
    PreparedBuilding b;
    b.name = std::move(name);
    b.train_data = dataset.slice(records.front().timestamp, records[cut].timestamp);
    const auto solar = make_solar_provider(dataset.site().latitude, dataset.site().longitude);
    auto [train, val] = chronological_split(build_supervised(b.train_data, solar), 1.0 - s.val_fraction);
    b.train = std::move(train);
    b.val = std::move(val);
    b.origins = eval::select_test_instants(records, s.test_instants, s.horizon, kWindowLength, cut);
    b.truth.resize(static_cast<Eigen::Index>(b.origins.size()), static_cast<Eigen::Index>(s.horizon));
    for (std::size_t i = 0; i < b.origins.size(); ++i)
        for (std::size_t j = 0; j < s.horizon; ++j)
            b.truth(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = records[b.origins[i] + 1 + j].t_in;
    b.dataset = std::move(dataset);
    return b;
}

inline Matrix to_matrix(std::span<const ForecastResult> forecasts) {
    if (forecasts.empty()) return {};
    Matrix m(static_cast<Eigen::Index>(forecasts.size()), static_cast<Eigen::Index>(forecasts.front().horizon()));
    for (std::size_t i = 0; i < forecasts.size(); ++i)
        for (std::size_t j = 0; j < forecasts[i].horizon(); ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = forecasts[i].mean[j];
    return m;
}

/// Gray-box forecasts from every origin; the state is filtered on the records
/// up to and including the origin.
inline std::vector<ForecastResult> forecast_graybox(const graybox::GrayboxPosterior& post, const PreparedBuilding& b,
                                                    std::size_t horizon) {
    const auto records = b.dataset.records();
    const auto& site = b.dataset.site();
    const auto solar = make_solar_provider(site.latitude, site.longitude);
    std::vector<ForecastResult> out;
    out.reserve(b.origins.size());
    for (std::size_t origin : b.origins) {
        const auto state = graybox::filter_state(post, records.first(origin + 1), site);
        const auto future = make_input_rows(records.subspan(origin + 1, horizon), site, solar);
        out.push_back(graybox::forecast(post, state, future));
    }
    return out;
}

/// Neural rollouts from every origin, batched over origins and samples.
inline std::vector<ForecastResult> forecast_neural(const nn::Model& model, const PreparedBuilding& b, std::size_t horizon,
                                                   std::size_t n_samples, std::mt19937_64& rng) {
    const auto records = b.dataset.records();
    const auto& site = b.dataset.site();
    const auto solar = make_solar_provider(site.latitude, site.longitude);
    std::vector<nn::RolloutInput> inputs;
    inputs.reserve(b.origins.size());
    for (std::size_t origin : b.origins)
        inputs.push_back(nn::make_rollout_input(records, origin, horizon, site, solar, model.window_length));
    return nn::rollout_batch(model, inputs, n_samples, rng);
}

/// One model's predictions on one building.
struct ModelRun {
    std::string model;
    std::string building;
    Matrix truth;
    Matrix pred;
    std::vector<double> drift;
};

inline ModelRun make_run(std::string model, const PreparedBuilding& b, std::span<const ForecastResult> forecasts) {
    ModelRun r{std::move(model), b.name, b.truth, to_matrix(forecasts), {}};
    r.drift = eval::drift_curve(r.truth, r.pred);
    return r;
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Metrics over all buildings of one model, rows stacked building by building.
struct PooledReport {
    std::string model;
    std::map<std::size_t, eval::Summary> rmse;  // per K
    std::vector<double> drift;
    std::map<std::string, double> scores;       // per weight profile
};

inline PooledReport pool(const std::string& model, std::span<const ModelRun> runs, const EvalSettings& s) {
    Eigen::Index rows = 0;
    for (const auto& r : runs)
        if (r.model == model) rows += r.pred.rows();
    if (rows == 0) throw InsufficientDataError("no runs for model '" + model + "'");
    Matrix truth(rows, static_cast<Eigen::Index>(s.horizon)), pred(rows, static_cast<Eigen::Index>(s.horizon));
    Eigen::Index at = 0;
    for (const auto& r : runs) {
        if (r.model != model) continue;
        if (r.pred.cols() != static_cast<Eigen::Index>(s.horizon)) throw ShapeError("run horizon differs from settings");
        truth.middleRows(at, r.truth.rows()) = r.truth;
        pred.middleRows(at, r.pred.rows()) = r.pred;
        at += r.pred.rows();
    }
    PooledReport out;
    out.model = model;
    for (std::size_t k : s.k_list) out.rmse[k] = eval::summarize(eval::horizon_rmse(truth, pred, k));
    out.drift = eval::drift_curve(truth, pred);
    for (const auto& p : s.profiles) out.scores[p] = eval::weighted_score(out.drift, eval::parse_profile(p));
    return out;
}

/// Pairs of 1-hour predictive std and 1-hour absolute error of the predictive
/// mean, one per origin.
struct UncertaintySamples {
    std::vector<double> step_std;
    std::vector<double> abs_error;

    void append(const UncertaintySamples& o) {
        step_std.insert(step_std.end(), o.step_std.begin(), o.step_std.end());
        abs_error.insert(abs_error.end(), o.abs_error.begin(), o.abs_error.end());
    }
};

inline UncertaintySamples one_hour_uncertainty(const nn::Model& model, const PreparedBuilding& b, std::size_t n_samples,
                                               std::mt19937_64& rng) {
    const auto f = forecast_neural(model, b, 1, n_samples, rng);
    UncertaintySamples out;
    for (std::size_t i = 0; i < f.size(); ++i) {
        out.step_std.push_back(f[i].step_std[0]);
        out.abs_error.push_back(std::abs(b.truth(static_cast<Eigen::Index>(i), 0) - f[i].mean[0]));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Prior sweep

struct SweepEntry {
    double prior_variance = 0.0;
    std::uint64_t seed = 0;
    std::map<std::size_t, eval::Summary> rmse;  // per K, pooled over buildings
    double kl = 0.0;                            // KL(q || p) of the returned model, summed over entries
    double kl_term = 0.0;                       // reduced and weighted KL in the last epoch
    double final_train_loss = 0.0;
    double best_val_loss = 0.0;
};

/// Trains one Bayesian model per (prior variance, seed, building) and pools
/// its forecasts over buildings.
inline std::vector<SweepEntry> prior_sweep(std::span<const double> priors, std::span<const std::uint64_t> seeds,
                                           std::span<const PreparedBuilding> buildings, const nn::TrainConfig& base,
                                           const EvalSettings& s) {
    if (buildings.empty()) throw ConfigError("prior sweep needs at least one building");
    if (priors.empty() || seeds.empty()) throw ConfigError("prior sweep needs at least one prior and one seed");
    std::vector<SweepEntry> out;
    for (double prior : priors) {
        for (std::uint64_t seed : seeds) {
            nn::TrainConfig cfg = base;
            cfg.prior_variance = prior;
            cfg.seed = seed;
            SweepEntry e;
            e.prior_variance = prior;
            e.seed = seed;
            std::vector<ModelRun> runs;
            for (const auto& b : buildings) {
                const nn::Model m = nn::train(nn::ModelKind::lstm_bnn, b.train, b.val, cfg);
                std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
                runs.push_back(make_run("lstm_bnn", b, forecast_neural(m, b, s.horizon, s.n_samples, rng)));
                e.kl += nn::kl_gaussian(m.vlayer) / static_cast<double>(buildings.size());
                e.kl_term += m.kl_trace.back() / static_cast<double>(buildings.size());
                e.final_train_loss += m.train_loss.back() / static_cast<double>(buildings.size());
                e.best_val_loss += m.best_val_loss / static_cast<double>(buildings.size());
            }
            e.rmse = pool("lstm_bnn", runs, s).rmse;
            out.push_back(std::move(e));
        }
    }
    return out;
}

inline nlohmann::json summary_to_json(const eval::Summary& s) {
    return {{"median", s.median}, {"q25", s.q25}, {"q75", s.q75}, {"q2_5", s.q025}, {"q97_5", s.q975}};
}

}  // namespace thermocast::experiment
