// thermocast: simulate, train, predict, evaluate and prior-sweep from the
// command line. Every subcommand writes run_manifest.json next to its outputs.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <boost/version.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#include <openssl/opensslv.h>

#include "thermocast/config.hpp"
#include "thermocast/error.hpp"
#include "thermocast/eval.hpp"
#include "thermocast/experiment.hpp"
#include "thermocast/graybox.hpp"
#include "thermocast/io.hpp"
#include "thermocast/neural.hpp"
#include "thermocast/simulator.hpp"
#include "thermocast/tensor.hpp"

#ifndef THERMOCAST_VERSION
#define THERMOCAST_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace thermocast;
using nlohmann::json;
using namespace thermocast::io;

namespace {

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read '" + path.string() + "' for hashing");
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

/// Collects inputs and outputs of one subcommand run.
class Manifest {
public:
    Manifest(std::string command, json arguments) : command_(std::move(command)), arguments_(std::move(arguments)) {}

    void input(const fs::path& p) { inputs_.push_back(p); }
    void output(const fs::path& p) { outputs_.push_back(p); }
    void config(json c) { config_ = std::move(c); }

    void write(const fs::path& dir) const {
        json j;
        j["command"] = command_;
        j["arguments"] = arguments_;
        j["config"] = config_;
        j["versions"] = {{"thermocast", THERMOCAST_VERSION},
                         {"checkpoint_format", nn::kCheckpointVersion},
                         {"compiler", __VERSION__},
                         {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                       std::to_string(EIGEN_MINOR_VERSION)},
                         {"boost", BOOST_LIB_VERSION},
                         {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                               std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                               std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                         {"openssl", OPENSSL_VERSION_TEXT}};
        j["inputs"] = digests(inputs_);
        j["outputs"] = digests(outputs_);
        write_json_file((dir / "run_manifest.json").string(), j);
    }

private:
    static json digests(const std::vector<fs::path>& paths) {
        json arr = json::array();
        for (const auto& p : paths) arr.push_back({{"path", p.generic_string()}, {"sha256", sha256_file(p)}});
        return arr;
    }

    std::string command_;
    json arguments_;
    json config_ = nullptr;
    std::vector<fs::path> inputs_;
    std::vector<fs::path> outputs_;
};

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create directory '" + dir.string() + "': " + ec.message());
}

std::string csv_line(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out += ',';
        out += fields[i];
    }
    return out + '\n';
}

std::string num(double v) { return format_double(v); }

BuildingDataset load_dataset(const fs::path& csv, const SiteMeta& site) {
    try {
        return read_dataset(csv.string(), site);
    } catch (const DataError& e) {
        throw DataError(csv.string() + ": " + e.what());
    }
}

struct CommonOptions {
    std::string config_path;
    std::string output_dir;
    std::optional<std::uint64_t> seed;
};

config::ExperimentConfig load_config(const CommonOptions& o) {
    auto cfg = config::load(o.config_path);
    if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;
    if (o.seed) cfg.seed = *o.seed;
    return cfg;
}

json common_arguments(const CommonOptions& o) {
    json j{{"config", o.config_path}};
    if (!o.output_dir.empty()) j["output_dir"] = o.output_dir;
    if (o.seed) j["seed"] = *o.seed;
    return j;
}

// ---------------------------------------------------------------------------
// simulate

void run_simulate(const CommonOptions& o) {
    const auto cfg = load_config(o);
    if (!cfg.simulation) throw ConfigError("config has no simulation section");
    const fs::path dir = cfg.data_dir();
    ensure_dir(dir);
    Manifest manifest("simulate", common_arguments(o));
    manifest.config(config::to_json(cfg));
    manifest.input(o.config_path);
    const fs::path site_path = dir / "site.json";
    write_json_file(site_path.string(), site_to_json(cfg.site));
    manifest.output(site_path);
    for (std::size_t i = 0; i < cfg.simulation->buildings; ++i) {
        const auto name = config::SimulationSpec::building_name(i);
        const auto sim_cfg = cfg.simulation->building_config(i);
        const auto dataset = sim::simulate_building(sim_cfg, cfg.site, cfg.simulation->hours);
        const fs::path csv = dir / (name + ".csv");
        const fs::path truth = dir / (name + ".truth.json");
        write_dataset_csv(csv.string(), dataset);
        write_json_file(truth.string(), {{"building", name}, {"simulator", sim::config_to_json(sim_cfg)}});
        manifest.output(csv);
        manifest.output(truth);
        std::cerr << "simulated " << name << ": " << dataset.size() << " heating-season rows\n";
    }
    manifest.write(dir);
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
    std::string model;
    std::vector<std::string> buildings;
    std::optional<std::size_t> epochs;
    std::optional<double> learning_rate;
    std::optional<std::size_t> hidden;
    std::optional<double> prior_variance;
    std::optional<double> kl_weight;
};

void run_train(const CommonOptions& o, const TrainOptions& t) {
    auto cfg = load_config(o);
    if (t.epochs) cfg.train.epochs = *t.epochs;
    if (t.learning_rate) cfg.train.learning_rate = *t.learning_rate;
    if (t.hidden) cfg.train.hidden = *t.hidden;
    if (t.prior_variance) cfg.train.prior_variance = *t.prior_variance;
    if (t.kl_weight) cfg.train.kl_weight = *t.kl_weight;
    cfg.train.validate();

    const fs::path dir = cfg.checkpoint_dir() / t.model;
    ensure_dir(dir);
    json args = common_arguments(o);
    args["model"] = t.model;
    if (!t.buildings.empty()) args["buildings"] = t.buildings;
    Manifest manifest("train", args);
    manifest.config(config::to_json(cfg));
    manifest.input(o.config_path);

    const auto datasets = cfg.resolved_datasets();
    bool any = false;
    for (std::size_t i = 0; i < datasets.size(); ++i) {
        const auto& entry = datasets[i];
        if (!t.buildings.empty() && std::find(t.buildings.begin(), t.buildings.end(), entry.name) == t.buildings.end())
            continue;
        any = true;
        manifest.input(entry.csv);
        const auto b = experiment::prepare_building(entry.name, load_dataset(entry.csv, cfg.site), cfg.evaluation);
        const fs::path ckpt = dir / (entry.name + ".json");
        const fs::path loss = dir / (entry.name + "_loss.csv");
        std::string trace;
        json checkpoint;
        if (t.model == "graybox") {
            const auto post = graybox::fit_variational(b.train_data, cfg.graybox);
            checkpoint = graybox::to_json(post);
            trace = csv_line({"iteration", "elbo", "observation_precision"});
            for (std::size_t k = 0; k < post.elbo_trace.size(); ++k)
                trace += csv_line({std::to_string(k), num(post.elbo_trace[k]),
                                   num(k < post.observation_precision_trace.size() ? post.observation_precision_trace[k]
                                                                                   : post.observation_precision.mean())});
            std::cerr << entry.name << ": graybox " << post.iterations << " iterations, theta = (" << post.coeffs[0].mean
                      << ", " << post.coeffs[1].mean << ", " << post.coeffs[2].mean << ")\n";
        } else {
            nn::TrainConfig tc = cfg.train;
            tc.seed = cfg.train_seed(i, t.model);
            const auto kind = nn::parse_model_kind(t.model);
            const auto model = nn::train(kind, b.train, b.val, tc);
            checkpoint = nn::to_json(model);
            trace = csv_line({"epoch", "train_loss", "val_loss", "kl_term"});
            for (std::size_t k = 0; k < model.train_loss.size(); ++k)
                trace += csv_line({std::to_string(k), num(model.train_loss[k]), num(model.val_loss[k]),
                                   num(k < model.kl_trace.size() ? model.kl_trace[k] : 0.0)});
            std::cerr << entry.name << ": " << t.model << " best validation loss " << model.best_val_loss << " at epoch "
                      << model.best_epoch << "\n";
        }
        checkpoint["building"] = entry.name;
        checkpoint["model"] = t.model;
        write_json_file(ckpt.string(), checkpoint);
        write_text_file(loss.string(), trace);
        manifest.output(ckpt);
        manifest.output(loss);
    }
    if (!any) throw ConfigError("no dataset matches the requested buildings");
    manifest.write(dir);
}

// ---------------------------------------------------------------------------
// predict

struct PredictOptions {
    std::string checkpoint;
    std::string dataset;
    std::string site;
    std::string instant;
    std::size_t horizon = 48;
    std::size_t samples = 10;
    std::uint64_t seed = 0;
    std::string out = "forecast.csv";
};

void run_predict(const PredictOptions& p) {
    const json ck = read_json_file(p.checkpoint);
    const SiteMeta site = read_site_json(p.site);
    const auto dataset = load_dataset(p.dataset, site);
    if (p.horizon == 0) throw ConfigError("horizon must be >= 1");
    Instant origin_time;
    try {
        origin_time = parse_iso8601(p.instant);
    } catch (const DataError& e) {
        throw ConfigError(std::string("--instant: ") + e.what());
    }
    const std::size_t origin = dataset.find(origin_time);
    if (origin == BuildingDataset::npos) throw DataError("instant " + p.instant + " is not a heating-season record of the dataset");
    const auto records = dataset.records();
    const auto solar = make_solar_provider(site.latitude, site.longitude);

    ForecastResult f;
    if (ck.value("kind", "") == "graybox") {
        const auto post = graybox::from_json(ck);
        if (origin + p.horizon >= records.size()) throw InsufficientDataError("not enough future rows for the horizon");
        for (std::size_t k = origin + 1; k <= origin + p.horizon; ++k)
            if (records[k].timestamp - records[k - 1].timestamp != Hours{1})
                throw InsufficientDataError("future rows are not contiguous");
        const auto state = graybox::filter_state(post, records.first(origin + 1), site);
        f = graybox::forecast(post, state, make_input_rows(records.subspan(origin + 1, p.horizon), site, solar));
    } else {
        const auto model = nn::from_json(ck);
        std::mt19937_64 rng(p.seed);
        const auto input = nn::make_rollout_input(records, origin, p.horizon, site, solar, model.window_length);
        f = nn::rollout(model, input, p.samples, rng);
    }

    std::string text = csv_line({"step", "mean", "step_std", "cum_std"});
    for (std::size_t k = 0; k < f.horizon(); ++k)
        text += csv_line({std::to_string(k + 1), num(f.mean[k]), num(f.step_std[k]), num(f.cum_std[k])});
    const fs::path out(p.out);
    const fs::path dir = out.parent_path().empty() ? fs::path(".") : out.parent_path();
    ensure_dir(dir);
    write_text_file(out.string(), text);

    Manifest manifest("predict", {{"checkpoint", p.checkpoint}, {"dataset", p.dataset}, {"site", p.site},
                                  {"instant", p.instant}, {"horizon", p.horizon}, {"samples", p.samples},
                                  {"seed", p.seed}, {"out", p.out}});
    manifest.input(p.checkpoint);
    manifest.input(p.dataset);
    manifest.input(p.site);
    manifest.output(out);
    manifest.write(dir);
}

// ---------------------------------------------------------------------------
// evaluate

std::map<std::pair<std::string, std::string>, fs::path> index_checkpoints(const std::vector<std::string>& files) {
    std::map<std::pair<std::string, std::string>, fs::path> out;
    for (const auto& f : files) {
        const json j = read_json_file(f);
        if (!j.contains("building") || !j.contains("model"))
            throw ConfigError("checkpoint '" + f + "' lacks building/model metadata");
        out[{j.at("model").get<std::string>(), j.at("building").get<std::string>()}] = f;
    }
    return out;
}

std::string summary_header(const std::string& first) {
    return csv_line({first, "median", "q25", "q75", "q2_5", "q97_5"});
}

std::string summary_row(const std::string& first, const eval::Summary& s) {
    return csv_line({first, num(s.median), num(s.q25), num(s.q75), num(s.q025), num(s.q975)});
}

void run_evaluate(const CommonOptions& o, const std::vector<std::string>& checkpoint_files) {
    const auto cfg = load_config(o);
    const auto& es = cfg.evaluation;
    const fs::path dir = cfg.output_dir / "eval";
    ensure_dir(dir);
    Manifest manifest("evaluate", common_arguments(o));
    manifest.config(config::to_json(cfg));
    manifest.input(o.config_path);
    const auto explicit_ckpts = index_checkpoints(checkpoint_files);

    std::vector<experiment::ModelRun> runs;
    experiment::UncertaintySamples uq;
    const auto datasets = cfg.resolved_datasets();
    for (std::size_t i = 0; i < datasets.size(); ++i) {
        const auto& entry = datasets[i];
        manifest.input(entry.csv);
        const auto b = experiment::prepare_building(entry.name, load_dataset(entry.csv, cfg.site), es);
        for (const auto& model : cfg.models) {
            fs::path path = cfg.checkpoint_dir() / model / (entry.name + ".json");
            if (const auto it = explicit_ckpts.find({model, entry.name}); it != explicit_ckpts.end()) path = it->second;
            if (!fs::exists(path)) throw ConfigError("missing checkpoint '" + path.string() + "'; run train first");
            manifest.input(path);
            const json ck = read_json_file(path.string());
            if (model == "graybox") {
                const auto post = graybox::from_json(ck);
                runs.push_back(experiment::make_run(model, b, experiment::forecast_graybox(post, b, es.horizon)));
            } else {
                const auto m = nn::from_json(ck);
                std::mt19937_64 rng(cfg.train_seed(i, model) ^ 0x2545f4914f6cdd1dULL);
                runs.push_back(experiment::make_run(model, b, experiment::forecast_neural(m, b, es.horizon, es.n_samples, rng)));
                if (m.bayesian()) uq.append(experiment::one_hour_uncertainty(m, b, es.uq_samples, rng));
            }
        }
    }

    std::vector<experiment::PooledReport> reports;
    for (const auto& model : cfg.models) reports.push_back(experiment::pool(model, runs, es));

    auto emit = [&](const std::string& name, const std::string& text) {
        const fs::path p = dir / name;
        write_text_file(p.string(), text);
        manifest.output(p);
    };
    for (std::size_t k : es.k_list) {
        std::string text = summary_header("model");
        for (const auto& r : reports) text += summary_row(r.model, r.rmse.at(k));
        emit("rmse_K" + std::to_string(k) + ".csv", text);
    }
    {
        std::vector<std::string> head{"step"};
        for (const auto& r : reports) head.push_back(r.model);
        std::string text = csv_line(head);
        for (std::size_t j = 0; j < es.horizon; ++j) {
            std::vector<std::string> row{std::to_string(j + 1)};
            for (const auto& r : reports) row.push_back(num(r.drift[j]));
            text += csv_line(row);
        }
        emit("drift.csv", text);
    }
    {
        std::vector<std::string> head{"model"};
        for (const auto& p : es.profiles) head.push_back(p);
        std::string text = csv_line(head);
        for (const auto& r : reports) {
            std::vector<std::string> row{r.model};
            for (const auto& p : es.profiles) row.push_back(num(r.scores.at(p)));
            text += csv_line(row);
        }
        emit("scores.csv", text);
    }
    {
        std::string text = csv_line({"building", "model", "drift_mean"});
        for (const auto& r : runs) text += csv_line({r.building, r.model, num(experiment::mean_of(r.drift))});
        emit("per_building.csv", text);
    }
    {
        json profiles = json::array();
        for (const auto& p : es.profiles) profiles.push_back(eval::parse_profile(p).to_json(es.horizon));
        const fs::path p = dir / "weight_profiles.json";
        write_json_file(p.string(), profiles);
        manifest.output(p);
    }
    if (!uq.step_std.empty()) {
        const auto report = eval::uncertainty_error_bins(uq.step_std, uq.abs_error, es.uq_bins);
        std::string text = csv_line({"bin", "std_lower", "std_upper", "mean_std", "mean_abs_error", "count"});
        for (std::size_t k = 0; k < report.bins.size(); ++k) {
            const auto& bin = report.bins[k];
            text += csv_line({std::to_string(k), num(bin.std_lower), num(bin.std_upper), num(bin.mean_std),
                              num(bin.mean_abs_error), std::to_string(bin.count)});
        }
        emit("uq_bins.csv", text);
        const fs::path p = dir / "uq_summary.json";
        write_json_file(p.string(), {{"spearman_rho", report.correlation.rho},
                                     {"p_value", report.correlation.p_value},
                                     {"samples", report.correlation.n},
                                     {"trajectories", es.uq_samples}});
        manifest.output(p);
    }
    manifest.write(dir);
    for (const auto& r : reports)
        std::cerr << r.model << ": mean drift " << experiment::mean_of(r.drift) << "\n";
}

// ---------------------------------------------------------------------------
// prior-sweep

void run_prior_sweep(const CommonOptions& o) {
    const auto cfg = load_config(o);
    const fs::path dir = cfg.output_dir / "prior_sweep";
    ensure_dir(dir);
    Manifest manifest("prior-sweep", common_arguments(o));
    manifest.config(config::to_json(cfg));
    manifest.input(o.config_path);
    std::vector<experiment::PreparedBuilding> buildings;
    for (const auto& entry : cfg.resolved_datasets()) {
        manifest.input(entry.csv);
        buildings.push_back(experiment::prepare_building(entry.name, load_dataset(entry.csv, cfg.site), cfg.evaluation));
    }
    const auto entries = experiment::prior_sweep(cfg.sweep_priors, cfg.sweep_seeds, buildings, cfg.train, cfg.evaluation);

    std::vector<std::string> head{"prior_variance", "seed", "kl", "kl_term", "final_train_loss", "best_val_loss"};
    for (std::size_t k : cfg.evaluation.k_list)
        for (const char* q : {"median", "q25", "q75", "q2_5", "q97_5"})
            head.push_back("rmse_K" + std::to_string(k) + "_" + q);
    std::string text = csv_line(head);
    for (const auto& e : entries) {
        std::vector<std::string> row{num(e.prior_variance), std::to_string(e.seed), num(e.kl), num(e.kl_term),
                                     num(e.final_train_loss), num(e.best_val_loss)};
        for (std::size_t k : cfg.evaluation.k_list) {
            const auto& s = e.rmse.at(k);
            for (double v : {s.median, s.q25, s.q75, s.q025, s.q975}) row.push_back(num(v));
        }
        text += csv_line(row);
    }
    const fs::path p = dir / "prior_sweep.csv";
    write_text_file(p.string(), text);
    manifest.output(p);
    manifest.write(dir);
}

int exit_code(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const DataError*>(&e)) return 3;
    if (dynamic_cast<const NumericalError*>(&e) || dynamic_cast<const DomainError*>(&e)) return 4;
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    ad::retain_freed_memory();
    CLI::App app{"Probabilistic indoor temperature forecasting"};
    app.set_version_flag("--version", THERMOCAST_VERSION);
    app.require_subcommand(1);

    CommonOptions common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", common.config_path, "Experiment config JSON")->required()->check(CLI::ExistingFile);
        sub->add_option("-o,--output-dir", common.output_dir, "Output directory (overrides " +
                                                                  std::string(config::kOutputDirEnv) + " and the config)");
        sub->add_option("--seed", common.seed, "Experiment seed");
    };

    auto* simulate = app.add_subcommand("simulate", "Write synthetic building datasets and their true parameters");
    add_common(simulate);

    TrainOptions train;
    auto* train_cmd = app.add_subcommand("train", "Fit one model kind on every building's training period");
    add_common(train_cmd);
    train_cmd->add_option("-m,--model", train.model, "graybox | lstm-mlp | lstm-bnn")
        ->required()
        ->check(CLI::IsMember({"graybox", "lstm-mlp", "lstm-bnn"}));
    train_cmd->add_option("-b,--building", train.buildings, "Restrict to these buildings");
    train_cmd->add_option("--epochs", train.epochs);
    train_cmd->add_option("--learning-rate", train.learning_rate);
    train_cmd->add_option("--hidden", train.hidden);
    train_cmd->add_option("--prior-variance", train.prior_variance);
    train_cmd->add_option("--kl-weight", train.kl_weight);

    PredictOptions predict;
    auto* predict_cmd = app.add_subcommand("predict", "Forecast from one origin with a trained checkpoint");
    predict_cmd->add_option("--checkpoint", predict.checkpoint)->required()->check(CLI::ExistingFile);
    predict_cmd->add_option("--dataset", predict.dataset)->required()->check(CLI::ExistingFile);
    predict_cmd->add_option("--site", predict.site, "Site metadata JSON")->required()->check(CLI::ExistingFile);
    predict_cmd->add_option("--instant", predict.instant, "Forecast origin, e.g. 2021-03-01T12:00:00Z")->required();
    predict_cmd->add_option("--horizon", predict.horizon)->capture_default_str();
    predict_cmd->add_option("--samples", predict.samples, "Trajectories for the Bayesian model")->capture_default_str();
    predict_cmd->add_option("--seed", predict.seed)->capture_default_str();
    predict_cmd->add_option("--out", predict.out)->capture_default_str();

    std::vector<std::string> eval_checkpoints;
    auto* evaluate = app.add_subcommand("evaluate", "Forecast every test instant and write metric tables");
    add_common(evaluate);
    evaluate->add_option("checkpoints", eval_checkpoints, "Checkpoints replacing the default locations")
        ->check(CLI::ExistingFile);

    auto* sweep = app.add_subcommand("prior-sweep", "Train the Bayesian model for each prior variance and seed");
    add_common(sweep);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*simulate) run_simulate(common);
        else if (*train_cmd) run_train(common, train);
        else if (*predict_cmd) run_predict(predict);
        else if (*evaluate) run_evaluate(common, eval_checkpoints);
        else if (*sweep) run_prior_sweep(common);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e);
    }
    return 0;
}
