#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <boost/random/normal_distribution.hpp>
#include <nlohmann/json.hpp>

#include "thermocast/adam.hpp"
#include "thermocast/error.hpp"
#include "thermocast/forecast.hpp"
#include "thermocast/tensor.hpp"
#include "thermocast/timeseries.hpp"

/// LSTM encoder with a two-layer head predicting the one-hour indoor
/// temperature change. The head's first layer is either deterministic
/// (LSTM+MLP) or mean-field Gaussian (LSTM+BNN).
namespace thermocast::nn {

using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

enum class ModelKind { lstm_mlp, lstm_bnn };

inline std::string to_string(ModelKind k) { return k == ModelKind::lstm_mlp ? "lstm_mlp" : "lstm_bnn"; }

/// Accepts "lstm_mlp" / "lstm_bnn" and the hyphenated command-line spelling.
inline ModelKind parse_model_kind(const std::string& s) {
    if (s == "lstm_mlp" || s == "lstm-mlp") return ModelKind::lstm_mlp;
    if (s == "lstm_bnn" || s == "lstm-bnn") return ModelKind::lstm_bnn;
    throw ConfigError("unknown model kind '" + s + "'");
}

/// Gate blocks are stacked along the columns in the order f, i, q, o.
struct LstmParams {
    Tensor w_x;   // M x 4D
    Tensor w_h;   // D x 4D
    Tensor bias;  // 4D

    std::size_t input_dim() const { return w_x.dim(0); }
    std::size_t hidden() const { return w_h.dim(0); }
};

struct MlpParams {
    Tensor w1;  // D x D1 (unused by the Bayesian head)
    Tensor b1;  // D1
    Tensor w2;  // D1 x 1
    Tensor b2;  // 1
};

/// Mean-field Gaussian first head layer; sigma = softplus(rho).
struct VariationalLayer {
    Tensor mu_w;
    Tensor mu_b;
    Tensor rho_w;
    Tensor rho_b;
    double prior_variance = 1e-3;

    static double rho_for(double sigma) { return std::log(std::expm1(sigma)); }

    Tensor sigma_w() const { return softplus_of(rho_w); }
    Tensor sigma_b() const { return softplus_of(rho_b); }

private:
    static Tensor softplus_of(const Tensor& rho) {
        Tensor s(rho.shape());
        for (std::size_t k = 0; k < rho.size(); ++k) s[k] = ad::softplus_value(rho[k]);
        return s;
    }
};

struct TrainConfig {
    std::size_t epochs = 400;
    double learning_rate = 1e-4;
    std::vector<double> halvings{0.5, 0.75, 0.9};  // fractions of the epoch budget
    double kl_weight = 1e-3;
    double prior_variance = 1e-3;
    std::string kl_reduction = "mean";  // "mean" over variational entries, or "sum"
    double initial_sigma = 1e-3;
    bool freeze_sigma = false;
    std::size_t hidden = 64;
    std::size_t mlp_hidden = 0;  // 0: hidden / 2
    std::uint64_t seed = 0;

    std::size_t head_width() const { return mlp_hidden == 0 ? std::max<std::size_t>(hidden / 2, 1) : mlp_hidden; }

    /// Epochs at which the learning rate halves.
    std::vector<std::size_t> halving_epochs() const {
        std::vector<std::size_t> out;
        for (double f : halvings) out.push_back(static_cast<std::size_t>(std::floor(f * static_cast<double>(epochs))));
        return out;
    }

    void validate() const {
        if (epochs == 0) throw ConfigError("epochs must be positive");
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
        if (!(kl_weight >= 0.0)) throw ConfigError("kl_weight must be >= 0");
        if (!(prior_variance > 0.0)) throw ConfigError("prior_variance must be positive");
        if (!(initial_sigma > 0.0)) throw ConfigError("initial_sigma must be positive");
        if (hidden == 0) throw ConfigError("hidden must be positive");
        if (kl_reduction != "mean" && kl_reduction != "sum") throw ConfigError("kl_reduction must be mean or sum");
        for (double f : halvings)
            if (!(f > 0.0 && f < 1.0)) throw ConfigError("halving fractions must lie in (0, 1)");
        const auto e = halving_epochs();
        for (std::size_t k = 1; k < e.size(); ++k)
            if (e[k] <= e[k - 1]) throw ConfigError("halving epochs must be strictly increasing");
    }
};

struct Model {
    ModelKind kind = ModelKind::lstm_mlp;
    LstmParams lstm;
    MlpParams mlp;
    VariationalLayer vlayer;  // Bayesian head only
    NormStats norm_stats;
    TrainConfig config;
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::vector<double> kl_trace;  // KL term (after reduction and weighting) per epoch
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;

    bool bayesian() const { return kind == ModelKind::lstm_bnn; }
    std::size_t hidden() const { return lstm.hidden(); }
    std::size_t window_length = kWindowLength;

    /// Trainable tensors in a fixed order.
    std::vector<Tensor*> parameters(bool include_rho = true) {
        std::vector<Tensor*> p{&lstm.w_x, &lstm.w_h, &lstm.bias};
        if (bayesian()) {
            p.push_back(&vlayer.mu_w);
            p.push_back(&vlayer.mu_b);
            if (include_rho) {
                p.push_back(&vlayer.rho_w);
                p.push_back(&vlayer.rho_b);
            }
        } else {
            p.push_back(&mlp.w1);
            p.push_back(&mlp.b1);
        }
        p.push_back(&mlp.w2);
        p.push_back(&mlp.b2);
        return p;
    }
};

namespace detail {

inline Tensor uniform(std::mt19937_64& rng, Shape shape, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = u(rng);
    return t;
}

// Ziggurat sampler: faster than std::normal_distribution and the same sequence
// on every standard library.
inline Tensor normal(std::mt19937_64& rng, Shape shape) {
    boost::random::normal_distribution<double> g(0.0, 1.0);
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = g(rng);
    return t;
}

}  // namespace detail

/// Fresh parameters: uniform in +-1/sqrt(fan-in) for deterministic layers,
/// zero means and sigma = initial_sigma for the Bayesian layer.
inline Model init_model(ModelKind kind, const TrainConfig& cfg, std::mt19937_64& rng,
                        std::size_t input_dim = kFeatureCount) {
    cfg.validate();
    const std::size_t d = cfg.hidden, d1 = cfg.head_width();
    Model m;
    m.kind = kind;
    m.config = cfg;
    const double lb = 1.0 / std::sqrt(static_cast<double>(d));
    m.lstm.w_x = detail::uniform(rng, {input_dim, 4 * d}, lb);
    // hour-of-week enters unscaled, 1..48
    if (input_dim > kHourOfWeekColumn)
        for (std::size_t j = 0; j < 4 * d; ++j) m.lstm.w_x[kHourOfWeekColumn * 4 * d + j] /= static_cast<double>(kHourOfWeekSlots);
    m.lstm.w_h = detail::uniform(rng, {d, 4 * d}, lb);
    m.lstm.bias = detail::uniform(rng, {4 * d}, lb);
    if (kind == ModelKind::lstm_mlp) {
        m.mlp.w1 = detail::uniform(rng, {d, d1}, lb);
        m.mlp.b1 = detail::uniform(rng, {d1}, lb);
    } else {
        m.vlayer.mu_w = Tensor({d, d1});
        m.vlayer.mu_b = Tensor({d1});
        m.vlayer.rho_w = Tensor({d, d1}, VariationalLayer::rho_for(cfg.initial_sigma));
        m.vlayer.rho_b = Tensor({d1}, VariationalLayer::rho_for(cfg.initial_sigma));
        m.vlayer.prior_variance = cfg.prior_variance;
    }
    const double hb = 1.0 / std::sqrt(static_cast<double>(d1));
    m.mlp.w2 = detail::uniform(rng, {d1, 1}, hb);
    m.mlp.b2 = detail::uniform(rng, {1}, hb);
    return m;
}

// ---------------------------------------------------------------------------
// Graph construction

struct LstmVars {
    Var w_x, w_h, bias;
};

/// Final hidden state for a batch of normalized windows laid out N x L x M.
inline Var lstm_graph(Tape& tape, const LstmVars& p, std::span<const double> windows, std::size_t n, std::size_t L) {
    const std::size_t m = p.w_x.value().dim(0);
    const std::size_t d = p.w_h.value().dim(0);
    if (windows.size() != n * L * m) throw ShapeError("window batch does not match N x L x M");
    Var h = tape.constant(Tensor({n, d}));
    Var c = tape.constant(Tensor({n, d}));
    for (std::size_t t = 0; t < L; ++t) {
        Tensor x({n, m});
        for (std::size_t r = 0; r < n; ++r)
            std::copy_n(windows.data() + (r * L + t) * m, m, x.data() + r * m);
        const Var z = gate_preactivation(tape.constant(std::move(x)), p.w_x, h, p.w_h, p.bias);
        c = lstm_cell_state(z, c);
        h = lstm_hidden_state(z, c);
    }
    return h;
}

struct HeadVars {
    Var w1, b1;                          // deterministic head
    Var mu_w, mu_b, sigma_w, sigma_b;    // Bayesian head
    Var w2, b2;
};

/// Head output N x 1. The Bayesian head draws one weight sample per row.
inline Var head_graph(Tape& tape, ModelKind kind, const HeadVars& p, Var h, std::mt19937_64* rng) {
    Var z;
    if (kind == ModelKind::lstm_mlp) {
        z = add(matmul(h, p.w1), p.b1);
    } else {
        const std::size_t n = h.value().dim(0), in = p.mu_w.value().dim(0), out = p.mu_w.value().dim(1);
        if (rng == nullptr) throw GraphError("Bayesian head needs a random source");
        Tensor eps_w = detail::normal(*rng, {n, in, out});
        Tensor eps_b = detail::normal(*rng, {n, out});
        z = sampled_affine(h, p.mu_w, p.sigma_w, p.mu_b, p.sigma_b, tape.constant(std::move(eps_w)),
                           tape.constant(std::move(eps_b)));
    }
    return add(matmul(relu(z), p.w2), p.b2);
}

/// KL(N(mu, sigma^2) || N(0, beta2)) summed over entries, on the tape.
inline Var kl_graph(Var mu, Var sigma, double beta2) {
    const double n = static_cast<double>(mu.value().size());
    const Var quad = scale(sum(add(square(sigma), square(mu))), 1.0 / (2.0 * beta2));
    return add_scalar(sub(quad, sum(ad::log(sigma))), n * (0.5 * std::log(beta2) - 0.5));
}

/// Sum over entries of ln(beta/sigma) + (sigma^2 + mu^2) / (2 beta^2) - 1/2.
inline double kl_gaussian(std::span<const double> mu, std::span<const double> sigma, double beta2) {
    if (!(beta2 > 0.0)) throw DomainError("prior variance must be positive");
    if (mu.size() != sigma.size()) throw ShapeError("mu and sigma differ in length");
    const double beta = std::sqrt(beta2);
    double kl = 0.0;
    for (std::size_t k = 0; k < mu.size(); ++k) {
        if (!(sigma[k] > 0.0)) throw DomainError("sigma must be positive");
        const double r = sigma[k] / beta;
        kl += -std::log(r) + 0.5 * r * r + mu[k] * mu[k] / (2.0 * beta2) - 0.5;
    }
    return kl;
}

inline double kl_gaussian(const VariationalLayer& v) {
    const Tensor sw = v.sigma_w(), sb = v.sigma_b();
    return kl_gaussian(v.mu_w.values(), sw.values(), v.prior_variance) +
           kl_gaussian(v.mu_b.values(), sb.values(), v.prior_variance);
}

/// One draw z_R = mu + sigma * eps of the layer's weights and bias.
inline std::pair<Tensor, Tensor> sample_layer(const VariationalLayer& v, std::mt19937_64& rng) {
    std::pair<Tensor, Tensor> z{detail::normal(rng, v.mu_w.shape()), detail::normal(rng, v.mu_b.shape())};
    const Tensor sw = v.sigma_w(), sb = v.sigma_b();
    for (std::size_t k = 0; k < sw.size(); ++k) z.first[k] = v.mu_w[k] + sw[k] * z.first[k];
    for (std::size_t k = 0; k < sb.size(); ++k) z.second[k] = v.mu_b[k] + sb[k] * z.second[k];
    return z;
}

/// Everything a forward pass needs, placed on one tape.
struct ModelVars {
    LstmVars lstm;
    HeadVars head;
    std::vector<Var> trainable;
};

inline ModelVars place(Tape& tape, const Model& m, bool trainable, bool train_rho = true) {
    auto put = [&](const Tensor& t, bool learn) {
        Var v = learn ? tape.parameter(t) : tape.constant(t);
        return v;
    };
    ModelVars v;
    v.lstm = {put(m.lstm.w_x, trainable), put(m.lstm.w_h, trainable), put(m.lstm.bias, trainable)};
    v.trainable = {v.lstm.w_x, v.lstm.w_h, v.lstm.bias};
    if (m.bayesian()) {
        v.head.mu_w = put(m.vlayer.mu_w, trainable);
        v.head.mu_b = put(m.vlayer.mu_b, trainable);
        v.trainable.push_back(v.head.mu_w);
        v.trainable.push_back(v.head.mu_b);
        const bool learn_rho = trainable && train_rho;
        const Var rho_w = put(m.vlayer.rho_w, learn_rho);
        const Var rho_b = put(m.vlayer.rho_b, learn_rho);
        if (learn_rho) {
            v.trainable.push_back(rho_w);
            v.trainable.push_back(rho_b);
        }
        v.head.sigma_w = softplus(rho_w);
        v.head.sigma_b = softplus(rho_b);
    } else {
        v.head.w1 = put(m.mlp.w1, trainable);
        v.head.b1 = put(m.mlp.b1, trainable);
        v.trainable.push_back(v.head.w1);
        v.trainable.push_back(v.head.b1);
    }
    v.head.w2 = put(m.mlp.w2, trainable);
    v.head.b2 = put(m.mlp.b2, trainable);
    v.trainable.push_back(v.head.w2);
    v.trainable.push_back(v.head.b2);
    return v;
}

/// Head predictions (N x 1) for normalized windows.
inline Var predict_graph(Tape& tape, const Model& m, const ModelVars& v, std::span<const double> windows,
                         std::size_t n, std::mt19937_64* rng) {
    const Var h = lstm_graph(tape, v.lstm, windows, n, m.window_length);
    return head_graph(tape, m.kind, v.head, h, rng);
}

/// Training objective: mean absolute error, plus w_KL * KL for the Bayesian head.
/// Returns {loss, weighted KL term}.
inline std::pair<Var, double> loss_graph(Tape& tape, const Model& m, const ModelVars& v,
                                         std::span<const double> windows, std::span<const double> targets,
                                         std::mt19937_64* rng) {
    const std::size_t n = targets.size();
    const Var pred = predict_graph(tape, m, v, windows, n, rng);
    const Var target = tape.constant(Tensor({n, 1}, std::vector<double>(targets.begin(), targets.end())));
    Var loss = scale(abs_sum(sub(pred, target)), 1.0 / static_cast<double>(n));
    double kl_term = 0.0;
    if (m.bayesian() && m.config.kl_weight > 0.0) {
        const double beta2 = m.vlayer.prior_variance;
        const Var kl = add(kl_graph(v.head.mu_w, v.head.sigma_w, beta2), kl_graph(v.head.mu_b, v.head.sigma_b, beta2));
        const double count = static_cast<double>(m.vlayer.mu_w.size() + m.vlayer.mu_b.size());
        const double w = m.config.kl_weight / (m.config.kl_reduction == "mean" ? count : 1.0);
        const Var term = scale(kl, w);
        kl_term = term.value().item();
        loss = add(loss, term);
    }
    return {loss, kl_term};
}

// ---------------------------------------------------------------------------
// Single-window forward passes (normalized L x M windows)

inline std::vector<double> lstm_forward(std::span<const double> window, const LstmParams& p) {
    const std::size_t m = p.input_dim();
    if (m == 0 || window.size() % m != 0) throw ShapeError("window length is not a multiple of the input width");
    Tape tape;
    const LstmVars v{tape.constant(p.w_x), tape.constant(p.w_h), tape.constant(p.bias)};
    return lstm_graph(tape, v, window, 1, window.size() / m).value().values();
}

inline double forward_deterministic(std::span<const double> window, const LstmParams& lstm, const MlpParams& mlp) {
    Tape tape;
    const LstmVars lv{tape.constant(lstm.w_x), tape.constant(lstm.w_h), tape.constant(lstm.bias)};
    const Var h = lstm_graph(tape, lv, window, 1, window.size() / lstm.input_dim());
    HeadVars hv;
    hv.w1 = tape.constant(mlp.w1);
    hv.b1 = tape.constant(mlp.b1);
    hv.w2 = tape.constant(mlp.w2);
    hv.b2 = tape.constant(mlp.b2);
    return head_graph(tape, ModelKind::lstm_mlp, hv, h, nullptr).value().item();
}

/// One draw of z_R = mu + sigma * eps followed by the deterministic computation.
inline double forward_stochastic(std::span<const double> window, const LstmParams& lstm, const VariationalLayer& vl,
                                 const MlpParams& layer2, std::mt19937_64& rng) {
    Tape tape;
    const LstmVars lv{tape.constant(lstm.w_x), tape.constant(lstm.w_h), tape.constant(lstm.bias)};
    const Var h = lstm_graph(tape, lv, window, 1, window.size() / lstm.input_dim());
    HeadVars hv;
    hv.mu_w = tape.constant(vl.mu_w);
    hv.mu_b = tape.constant(vl.mu_b);
    hv.sigma_w = tape.constant(vl.sigma_w());
    hv.sigma_b = tape.constant(vl.sigma_b());
    hv.w2 = tape.constant(layer2.w2);
    hv.b2 = tape.constant(layer2.b2);
    return head_graph(tape, ModelKind::lstm_bnn, hv, h, &rng).value().item();
}

/// Head outputs for a batch of normalized windows without building gradients.
inline std::vector<double> predict_batch(const Model& m, std::span<const double> windows, std::size_t n,
                                         std::mt19937_64* rng) {
    Tape tape;
    const ModelVars v = place(tape, m, false);
    return predict_graph(tape, m, v, windows, n, rng).value().values();
}

// ---------------------------------------------------------------------------
// Training

namespace detail {

inline double evaluate_loss(const Model& m, std::span<const double> windows, std::span<const double> targets,
                            std::mt19937_64& rng) {
    Tape tape;
    const ModelVars v = place(tape, m, false);
    return loss_graph(tape, m, v, windows, targets, &rng).first.value().item();
}

}  // namespace detail

/// Full-batch Adam training with a halving learning-rate schedule. Returns the
/// parameters with the lowest validation loss together with both loss traces.
/// `initial` replaces the random initialization when given.
inline Model train(ModelKind kind, const SupervisedSet& train_set, const SupervisedSet& val_set,
                   const TrainConfig& cfg, const Model* initial = nullptr) {
    cfg.validate();
    if (train_set.size() == 0 || val_set.size() == 0) throw InsufficientDataError("empty training or validation set");
    std::mt19937_64 rng(cfg.seed);
    Model model = initial ? *initial : init_model(kind, cfg, rng);
    model.kind = kind;
    model.config = cfg;
    model.window_length = train_set.window_length;
    model.norm_stats = train_set.norm_stats;
    if (model.bayesian()) model.vlayer.prior_variance = cfg.prior_variance;
    model.train_loss.clear();
    model.val_loss.clear();
    model.kl_trace.clear();

    SupervisedSet val_norm = val_set;
    val_norm.norm_stats = train_set.norm_stats;
    const std::vector<double> x_train = train_set.normalized_inputs();
    const std::vector<double> x_val = val_norm.normalized_inputs();

    ad::AdamState adam;
    ad::AdamConfig adam_cfg;
    adam_cfg.lr = cfg.learning_rate;
    const auto halving = cfg.halving_epochs();
    const bool train_rho = !cfg.freeze_sigma;

    Model best = model;
    best.best_val_loss = std::numeric_limits<double>::infinity();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        adam_cfg.lr = cfg.learning_rate;
        for (std::size_t e : halving)
            if (epoch >= e) adam_cfg.lr *= 0.5;
        double loss_value = 0.0;
        std::vector<Tensor> grads;
        try {
            Tape tape;
            const ModelVars v = place(tape, model, true, train_rho);
            const auto [loss, kl_term] = loss_graph(tape, model, v, x_train, train_set.targets, &rng);
            loss_value = loss.value().item();
            model.kl_trace.push_back(kl_term);
            tape.backward(loss);
            for (const Var& p : v.trainable) grads.push_back(tape.grad(p));
        } catch (const NumericalError& e) {
            throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
        }
        if (!std::isfinite(loss_value)) throw DivergenceError("training loss became non-finite");
        const auto params = model.parameters(train_rho);
        ad::adam_step(params, grads, adam, adam_cfg);
        model.train_loss.push_back(loss_value);

        double val = 0.0;
        try {
            val = detail::evaluate_loss(model, x_val, val_set.targets, rng);
        } catch (const NumericalError& e) {
            throw DivergenceError("validation diverged at epoch " + std::to_string(epoch) + ": " + e.what());
        }
        model.val_loss.push_back(val);
        if (val < best.best_val_loss) {
            best.lstm = model.lstm;
            best.mlp = model.mlp;
            best.vlayer = model.vlayer;
            best.best_val_loss = val;
            best.best_epoch = epoch;
        }
    }
    best.kind = model.kind;
    best.config = model.config;
    best.window_length = model.window_length;
    best.norm_stats = model.norm_stats;
    best.train_loss = std::move(model.train_loss);
    best.val_loss = std::move(model.val_loss);
    best.kl_trace = std::move(model.kl_trace);
    return best;
}

// ---------------------------------------------------------------------------
// Autoregressive rollout

/// Inputs for one forecast origin t: history rows up to and including t and
/// the exogenous rows for t+1 .. t+H.
struct RolloutInput {
    std::vector<InputRow> history;
    std::vector<double> history_t_in;
    std::vector<InputRow> future;

    std::size_t horizon() const { return future.size(); }
};

/// Origin at records[origin]; needs L+1 contiguous hours ending there and H
/// contiguous hours after it.
inline RolloutInput make_rollout_input(std::span<const HourlyRecord> records, std::size_t origin, std::size_t horizon,
                                       const SiteMeta& site, const SolarProvider& solar,
                                       std::size_t window_length = kWindowLength) {
    if (horizon == 0) throw ConfigError("horizon must be >= 1");
    if (origin >= records.size()) throw DataError("forecast origin outside the dataset");
    if (origin < window_length) throw InsufficientHistoryError("fewer than L+1 history records");
    for (std::size_t k = origin - window_length + 1; k <= origin; ++k)
        if (records[k].timestamp - records[k - 1].timestamp != Hours{1})
            throw InsufficientHistoryError("history before the origin is not contiguous");
    if (origin + horizon >= records.size()) throw InsufficientDataError("not enough future rows for the horizon");
    for (std::size_t k = origin + 1; k <= origin + horizon; ++k)
        if (records[k].timestamp - records[k - 1].timestamp != Hours{1})
            throw InsufficientDataError("future rows are not contiguous");
    RolloutInput in;
    for (std::size_t k = origin - window_length; k <= origin; ++k) {
        in.history.push_back(make_input_row(records[k], site, solar));
        in.history_t_in.push_back(records[k].t_in);
    }
    for (std::size_t k = origin + 1; k <= origin + horizon; ++k) in.future.push_back(make_input_row(records[k], site, solar));
    return in;
}

/// Rolls every input forward H steps with n_samples trajectories each (one
/// for the deterministic head). Each step feeds the predicted temperature back
/// into the window; the Bayesian head draws fresh weights every step.
inline std::vector<ForecastResult> rollout_batch(const Model& m, std::span<const RolloutInput> inputs,
                                                 std::size_t n_samples, std::mt19937_64& rng) {
    if (inputs.empty()) return {};
    const std::size_t L = m.window_length, M = kFeatureCount;
    const std::size_t horizon = inputs.front().horizon();
    const std::size_t samples = m.bayesian() ? std::max<std::size_t>(n_samples, 1) : 1;
    for (const auto& in : inputs) {
        if (in.horizon() == 0) throw ConfigError("horizon must be >= 1");
        if (in.horizon() != horizon) throw ShapeError("rollout inputs differ in horizon");
        if (in.history.size() < L + 1 || in.history_t_in.size() != in.history.size())
            throw InsufficientHistoryError("rollout needs at least L+1 history records");
    }
    const std::size_t rows = inputs.size() * samples;
    // per row: the last L exogenous rows and their indoor temperatures
    std::vector<InputRow> win_in(rows * L);
    std::vector<double> win_t(rows * L);
    for (std::size_t r = 0; r < rows; ++r) {
        const auto& in = inputs[r / samples];
        const std::size_t off = in.history.size() - L;
        for (std::size_t k = 0; k < L; ++k) {
            win_in[r * L + k] = in.history[off + k];
            win_t[r * L + k] = in.history_t_in[off + k];
        }
    }
    std::vector<ForecastResult> out(inputs.size());
    for (auto& f : out) {
        f.mean.assign(horizon, 0.0);
        f.step_std.assign(horizon, 0.0);
        f.n_samples = samples;
    }
    std::vector<double> batch(rows * L * M);
    for (std::size_t step = 0; step < horizon; ++step) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t k = 0; k < L; ++k) {
                const FeatureRow f = m.norm_stats.normalize(feature_row(win_in[r * L + k], win_t[r * L + k]));
                std::copy(f.begin(), f.end(), batch.begin() + static_cast<std::ptrdiff_t>((r * L + k) * M));
            }
        const std::vector<double> delta = predict_batch(m, batch, rows, &rng);
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            double sum = 0.0, mean_delta = 0.0;
            for (std::size_t s = 0; s < samples; ++s) {
                const std::size_t r = i * samples + s;
                sum += win_t[r * L + L - 1] + delta[r];
                mean_delta += delta[r];
            }
            mean_delta /= static_cast<double>(samples);
            double ss = 0.0;
            for (std::size_t s = 0; s < samples; ++s) ss += (delta[i * samples + s] - mean_delta) * (delta[i * samples + s] - mean_delta);
            out[i].mean[step] = sum / static_cast<double>(samples);
            out[i].step_std[step] = samples > 1 ? std::sqrt(ss / static_cast<double>(samples - 1)) : 0.0;
        }
        if (step + 1 == horizon) break;
        for (std::size_t r = 0; r < rows; ++r) {
            const double next = win_t[r * L + L - 1] + delta[r];
            std::rotate(win_in.begin() + static_cast<std::ptrdiff_t>(r * L),
                        win_in.begin() + static_cast<std::ptrdiff_t>(r * L + 1),
                        win_in.begin() + static_cast<std::ptrdiff_t>((r + 1) * L));
            std::rotate(win_t.begin() + static_cast<std::ptrdiff_t>(r * L),
                        win_t.begin() + static_cast<std::ptrdiff_t>(r * L + 1),
                        win_t.begin() + static_cast<std::ptrdiff_t>((r + 1) * L));
            win_in[r * L + L - 1] = inputs[r / samples].future[step];
            win_t[r * L + L - 1] = next;
        }
    }
    for (auto& f : out) f.accumulate();
    return out;
}

inline ForecastResult rollout(const Model& m, const RolloutInput& input, std::size_t n_samples, std::mt19937_64& rng) {
    return rollout_batch(m, std::span(&input, 1), n_samples, rng).front();
}

// ---------------------------------------------------------------------------
// Checkpoint

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json tensor_to_json(const Tensor& t) { return {{"shape", t.shape()}, {"values", t.values()}}; }

inline Tensor tensor_from_json(const nlohmann::json& j) {
    return Tensor(j.at("shape").get<Shape>(), j.at("values").get<std::vector<double>>());
}

inline nlohmann::json config_to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"learning_rate", c.learning_rate},
            {"halvings", c.halvings},
            {"kl_weight", c.kl_weight},
            {"prior_variance", c.prior_variance},
            {"kl_reduction", c.kl_reduction},
            {"initial_sigma", c.initial_sigma},
            {"freeze_sigma", c.freeze_sigma},
            {"hidden", c.hidden},
            {"mlp_hidden", c.mlp_hidden},
            {"seed", c.seed}};
}

/// Overlays the keys present in `j` on `base`; unknown keys are rejected.
inline TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "epochs") base.epochs = value.get<std::size_t>();
            else if (key == "learning_rate") base.learning_rate = value.get<double>();
            else if (key == "halvings") base.halvings = value.get<std::vector<double>>();
            else if (key == "kl_weight") base.kl_weight = value.get<double>();
            else if (key == "prior_variance") base.prior_variance = value.get<double>();
            else if (key == "kl_reduction") base.kl_reduction = value.get<std::string>();
            else if (key == "initial_sigma") base.initial_sigma = value.get<double>();
            else if (key == "freeze_sigma") base.freeze_sigma = value.get<bool>();
            else if (key == "hidden") base.hidden = value.get<std::size_t>();
            else if (key == "mlp_hidden") base.mlp_hidden = value.get<std::size_t>();
            else if (key == "seed") base.seed = value.get<std::uint64_t>();
            else throw ConfigError("unknown training option '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("training options: ") + e.what());
    }
    base.validate();
    return base;
}

inline nlohmann::json to_json(const Model& m) {
    nlohmann::json j;
    j["format_version"] = kCheckpointVersion;
    j["kind"] = to_string(m.kind);
    j["hidden"] = m.hidden();
    j["window_length"] = m.window_length;
    j["lstm"] = {{"w_x", tensor_to_json(m.lstm.w_x)}, {"w_h", tensor_to_json(m.lstm.w_h)},
                 {"bias", tensor_to_json(m.lstm.bias)}};
    if (m.bayesian()) {
        j["variational"] = {{"mu_w", tensor_to_json(m.vlayer.mu_w)},
                            {"mu_b", tensor_to_json(m.vlayer.mu_b)},
                            {"sigma_w", tensor_to_json(m.vlayer.sigma_w())},
                            {"sigma_b", tensor_to_json(m.vlayer.sigma_b())},
                            {"rho_w", tensor_to_json(m.vlayer.rho_w)},
                            {"rho_b", tensor_to_json(m.vlayer.rho_b)},
                            {"prior_variance", m.vlayer.prior_variance}};
        j["output"] = {{"w2", tensor_to_json(m.mlp.w2)}, {"b2", tensor_to_json(m.mlp.b2)}};
    } else {
        j["mlp"] = {{"w1", tensor_to_json(m.mlp.w1)}, {"b1", tensor_to_json(m.mlp.b1)},
                    {"w2", tensor_to_json(m.mlp.w2)}, {"b2", tensor_to_json(m.mlp.b2)}};
    }
    j["norm_stats"] = {{"mean", m.norm_stats.mean}, {"std", m.norm_stats.std}};
    j["train_config"] = config_to_json(m.config);
    j["best_val_loss"] = m.best_val_loss;
    j["best_epoch"] = m.best_epoch;
    j["train_loss"] = m.train_loss;
    j["val_loss"] = m.val_loss;
    return j;
}

inline Model from_json(const nlohmann::json& j) {
    try {
        if (j.at("format_version").get<int>() != kCheckpointVersion)
            throw ConfigError("unsupported model checkpoint version");
        Model m;
        m.kind = parse_model_kind(j.at("kind").get<std::string>());
        m.window_length = j.at("window_length").get<std::size_t>();
        const auto& l = j.at("lstm");
        m.lstm = {tensor_from_json(l.at("w_x")), tensor_from_json(l.at("w_h")), tensor_from_json(l.at("bias"))};
        if (m.bayesian()) {
            const auto& v = j.at("variational");
            m.vlayer.mu_w = tensor_from_json(v.at("mu_w"));
            m.vlayer.mu_b = tensor_from_json(v.at("mu_b"));
            m.vlayer.rho_w = tensor_from_json(v.at("rho_w"));
            m.vlayer.rho_b = tensor_from_json(v.at("rho_b"));
            m.vlayer.prior_variance = v.at("prior_variance").get<double>();
            m.mlp.w2 = tensor_from_json(j.at("output").at("w2"));
            m.mlp.b2 = tensor_from_json(j.at("output").at("b2"));
        } else {
            const auto& p = j.at("mlp");
            m.mlp = {tensor_from_json(p.at("w1")), tensor_from_json(p.at("b1")), tensor_from_json(p.at("w2")),
                     tensor_from_json(p.at("b2"))};
        }
        m.norm_stats.mean = j.at("norm_stats").at("mean").get<std::array<double, kFeatureCount>>();
        m.norm_stats.std = j.at("norm_stats").at("std").get<std::array<double, kFeatureCount>>();
        m.config = config_from_json(j.at("train_config"));
        m.best_val_loss = j.at("best_val_loss").get<double>();
        m.best_epoch = j.at("best_epoch").get<std::size_t>();
        m.train_loss = j.at("train_loss").get<std::vector<double>>();
        m.val_loss = j.at("val_loss").get<std::vector<double>>();
        const std::size_t d = m.hidden();
        if (m.lstm.w_x.rank() != 2 || m.lstm.w_x.dim(1) != 4 * d || m.lstm.bias.size() != 4 * d)
            throw ConfigError("inconsistent LSTM dimensions in checkpoint");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model checkpoint: ") + e.what());
    } catch (const ShapeError& e) {
        throw ConfigError(std::string("model checkpoint: ") + e.what());
    }
}

}  // namespace thermocast::nn
