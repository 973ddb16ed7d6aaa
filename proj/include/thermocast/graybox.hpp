#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/digamma.hpp>
#include <nlohmann/json.hpp>

#include "thermocast/error.hpp"
#include "thermocast/forecast.hpp"
#include "thermocast/timeseries.hpp"

/// Bayesian first-order state-space model of indoor temperature:
///
///   x_t = (1 - th1 - th2) x_{t-1} + th1 T_sup + th2 T_out + th3 ghi + psi[slot] + N(0, 1/tau_p)
///   y_t = x_t + N(0, 1/tau_o)
///
/// with ARD Gaussian priors on the 51 coefficients and Gamma priors on the
/// two noise precisions, fitted by mean-field coordinate ascent.
namespace thermocast::graybox {

inline constexpr std::size_t kProfileSlots = 48;
inline constexpr std::size_t kCoefficientCount = 3 + kProfileSlots;
inline constexpr std::size_t kParameterCount = kCoefficientCount + 2;

struct Gaussian {
    double mean = 0.0;
    double variance = 1.0;
};
using GaussianFactor = Gaussian;

struct GammaFactor {
    double shape = 1.0;
    double rate = 1.0;

    double mean() const { return shape / rate; }
    double mean_log() const { return boost::math::digamma(shape) - std::log(rate); }
    /// E[1/lambda], finite for shape > 1.
    double mean_inverse() const { return shape > 1.0 ? rate / (shape - 1.0) : rate / shape; }
    double entropy() const {
        return shape - std::log(rate) + std::lgamma(shape) + (1.0 - shape) * boost::math::digamma(shape);
    }
    /// E_q[log Gamma(lambda | a0, b0)]
    double expected_log_prior(double a0, double b0) const {
        return a0 * std::log(b0) - std::lgamma(a0) + (a0 - 1.0) * mean_log() - b0 * mean();
    }
};

/// Point values of all 53 parameters (variances instead of precisions).
struct PointParams {
    double theta1 = 0.0;
    double theta2 = 0.0;
    double theta3 = 0.0;
    std::array<double, kProfileSlots> profile{};
    double process_variance = 1.0;
    double observation_variance = 1.0;

    double transition() const { return 1.0 - theta1 - theta2; }
    double drive(const InputRow& in) const {
        return theta1 * in.t_sup + theta2 * in.t_out + theta3 * in.ghi +
               profile[static_cast<std::size_t>(in.hour_of_week - 1)];
    }
};

/// Scalar linear-Gaussian chain x_t = a x_{t-1} + drive[t] + N(0, q) with
/// optional observations and optional extra Gaussian evidence per step.
struct ScalarChain {
    double transition = 1.0;
    double process_variance = 1.0;
    Gaussian initial;
    std::vector<double> drive;  // drive[0] unused
    std::vector<std::optional<double>> observations;
    double observation_variance = 1.0;
    std::vector<Gaussian> evidence;  // empty, or one entry per step; infinite variance = none

    std::size_t size() const { return observations.size(); }
};

struct FilterResult {
    std::vector<Gaussian> predicted;
    std::vector<Gaussian> filtered;
    double log_likelihood = 0.0;
};

struct SmootherResult {
    std::vector<Gaussian> smoothed;
    std::vector<double> lag_one;  // lag_one[t] = Cov(x_t, x_{t+1})
};

namespace detail {

inline void gaussian_update(Gaussian& g, double value, double variance) {
    const double s = g.variance + variance;
    g.mean += g.variance / s * (value - g.mean);
    g.variance = g.variance * variance / s;
}

}  // namespace detail

inline FilterResult filter(const ScalarChain& chain) {
    const std::size_t n = chain.size();
    if (chain.drive.size() != n) throw ShapeError("drive and observations differ in length");
    if (!chain.evidence.empty() && chain.evidence.size() != n) throw ShapeError("evidence length mismatch");
    FilterResult out;
    out.predicted.resize(n);
    out.filtered.resize(n);
    Gaussian g = chain.initial;
    for (std::size_t t = 0; t < n; ++t) {
        if (t > 0) {
            g.mean = chain.transition * g.mean + chain.drive[t];
            g.variance = chain.transition * chain.transition * g.variance + chain.process_variance;
        }
        if (!(g.variance > 0.0) || !std::isfinite(g.variance))
            throw NumericalError("non-positive predicted variance at step " + std::to_string(t));
        out.predicted[t] = g;
        if (const auto& y = chain.observations[t]) {
            const double s = g.variance + chain.observation_variance;
            const double r = *y - g.mean;
            out.log_likelihood += -0.5 * (std::log(2.0 * std::numbers::pi * s) + r * r / s);
            detail::gaussian_update(g, *y, chain.observation_variance);
        }
        if (!chain.evidence.empty() && std::isfinite(chain.evidence[t].variance))
            detail::gaussian_update(g, chain.evidence[t].mean, chain.evidence[t].variance);
        out.filtered[t] = g;
    }
    return out;
}

/// Rauch-Tung-Striebel backward pass for a chain with transition `a`.
inline SmootherResult smooth(const FilterResult& f, double a) {
    const std::size_t n = f.filtered.size();
    SmootherResult out;
    out.smoothed = f.filtered;
    out.lag_one.assign(n > 0 ? n - 1 : 0, 0.0);
    for (std::size_t k = n; k-- > 1;) {
        const std::size_t t = k - 1;
        const auto& filt = f.filtered[t];
        const auto& pred = f.predicted[k];
        if (!(pred.variance > 0.0) || !(filt.variance > 0.0))
            throw NumericalError("non-positive variance in smoother at step " + std::to_string(t));
        const double gain = filt.variance * a / pred.variance;
        const auto& next = out.smoothed[k];
        out.smoothed[t].mean = filt.mean + gain * (next.mean - pred.mean);
        out.smoothed[t].variance = filt.variance + gain * gain * (next.variance - pred.variance);
        out.lag_one[t] = gain * next.variance;
        if (!(out.smoothed[t].variance > 0.0))
            throw NumericalError("non-positive smoothed variance at step " + std::to_string(t));
    }
    return out;
}

inline ScalarChain make_chain(std::span<const std::optional<double>> observations, std::span<const InputRow> inputs,
                              const PointParams& params, Gaussian initial) {
    if (observations.size() != inputs.size()) throw ShapeError("observations and inputs differ in length");
    ScalarChain chain;
    chain.transition = params.transition();
    chain.process_variance = params.process_variance;
    chain.observation_variance = params.observation_variance;
    chain.initial = initial;
    chain.observations.assign(observations.begin(), observations.end());
    chain.drive.resize(inputs.size(), 0.0);
    for (std::size_t t = 1; t < inputs.size(); ++t) chain.drive[t] = params.drive(inputs[t]);
    return chain;
}

/// Kalman filter for the indoor model under point parameters. Missing
/// observations skip the update.
inline FilterResult kalman_filter(std::span<const std::optional<double>> observations,
                                  std::span<const InputRow> inputs, const PointParams& params,
                                  Gaussian initial = {20.0, 100.0}) {
    const double a = params.transition();
    if (!(a > -1.0 && a < 1.0)) throw DomainError("transition coefficient outside (-1, 1)");
    if (!(params.process_variance >= 0.0) || !(params.observation_variance >= 0.0))
        throw DomainError("noise variances must be non-negative");
    return filter(make_chain(observations, inputs, params, initial));
}

inline SmootherResult rts_smoother(const FilterResult& filtered, const PointParams& params) {
    return smooth(filtered, params.transition());
}

// ---------------------------------------------------------------------------
// Variational fit

struct Priors {
    double gamma_shape = 1e-3;
    double gamma_rate = 1e-3;
    double initial_state_variance = 4.0;  // around the first observation of each segment
};

struct FitOptions {
    Priors priors;
    std::size_t max_iters = 200;
    double tol = 1e-9;
    std::size_t max_rows = 500 * 24;  // most recent 500 heating-season days
    std::size_t min_rows = 100;
};

/// One contiguous run of hourly rows.
struct Segment {
    std::vector<Instant> times;
    std::vector<InputRow> inputs;
    std::vector<std::optional<double>> observations;

    std::size_t size() const { return inputs.size(); }
};

struct GrayboxPosterior {
    std::array<GaussianFactor, kCoefficientCount> coeffs{};
    Eigen::MatrixXd coeff_cov = Eigen::MatrixXd::Identity(kCoefficientCount, kCoefficientCount);
    GammaFactor process_precision;
    GammaFactor observation_precision;
    std::array<GammaFactor, kCoefficientCount> ard{};
    std::vector<Instant> state_times;
    std::vector<Gaussian> state;  // smoothed marginals
    std::vector<double> elbo_trace;
    std::vector<double> observation_precision_trace;  // E[tau_o] after each iteration
    Priors priors;
    std::size_t rows = 0;
    std::size_t iterations = 0;
    bool converged = false;

    /// Posterior means, with expected noise variances E[1/tau].
    PointParams expected() const {
        PointParams p;
        p.theta1 = coeffs[0].mean;
        p.theta2 = coeffs[1].mean;
        p.theta3 = coeffs[2].mean;
        for (std::size_t k = 0; k < kProfileSlots; ++k) p.profile[k] = coeffs[3 + k].mean;
        p.process_variance = process_precision.mean_inverse();
        p.observation_variance = observation_precision.mean_inverse();
        return p;
    }
};

namespace detail {

inline constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)

/// Nonzero entries of the regressor c_t = [T_sup, T_out, ghi, e_slot].
struct SparseRow {
    std::array<std::size_t, 4> idx;
    std::array<double, 4> val;
};

inline SparseRow regressor(const InputRow& in) {
    return {{0, 1, 2, 3 + static_cast<std::size_t>(in.hour_of_week - 1)}, {in.t_sup, in.t_out, in.ghi, 1.0}};
}

struct StateMoments {
    std::vector<Gaussian> marginal;
    std::vector<double> lag_one;
};

struct Sufficient {
    Eigen::MatrixXd phi_phi = Eigen::MatrixXd::Zero(kCoefficientCount, kCoefficientCount);
    Eigen::VectorXd phi_d = Eigen::VectorXd::Zero(kCoefficientCount);
    double d_d = 0.0;
    std::size_t transitions = 0;
};

/// Expected regression statistics with phi_t = c_t - x_{t-1} u, d_t = x_t - x_{t-1},
/// u = e_0 + e_1.
inline Sufficient sufficient_statistics(std::span<const Segment> segments, std::span<const StateMoments> states) {
    Sufficient s;
    for (std::size_t k = 0; k < segments.size(); ++k) {
        const auto& seg = segments[k];
        const auto& st = states[k];
        for (std::size_t t = 1; t < seg.size(); ++t) {
            const double m0 = st.marginal[t - 1].mean, m1 = st.marginal[t].mean;
            const double xx0 = m0 * m0 + st.marginal[t - 1].variance;
            const double xx1 = m1 * m1 + st.marginal[t].variance;
            const double x01 = m0 * m1 + st.lag_one[t - 1];
            const SparseRow c = regressor(seg.inputs[t]);
            for (std::size_t i = 0; i < 4; ++i)
                for (std::size_t j = 0; j < 4; ++j) s.phi_phi(c.idx[i], c.idx[j]) += c.val[i] * c.val[j];
            for (std::size_t i = 0; i < 4; ++i) {
                for (std::size_t u = 0; u < 2; ++u) {
                    s.phi_phi(c.idx[i], u) -= m0 * c.val[i];
                    s.phi_phi(u, c.idx[i]) -= m0 * c.val[i];
                }
                s.phi_d(c.idx[i]) += c.val[i] * (m1 - m0);
            }
            for (std::size_t u = 0; u < 2; ++u) {
                for (std::size_t v = 0; v < 2; ++v) s.phi_phi(u, v) += xx0;
                s.phi_d(u) -= x01 - xx0;
            }
            s.d_d += xx1 - 2.0 * x01 + xx0;
            ++s.transitions;
        }
    }
    return s;
}

/// E_q[sum_t (d_t - theta^T phi_t)^2]
inline double expected_residual(const Sufficient& s, const Eigen::VectorXd& mu, const Eigen::MatrixXd& cov) {
    return s.d_d - 2.0 * mu.dot(s.phi_d) + mu.dot(s.phi_phi * mu) + (cov.cwiseProduct(s.phi_phi)).sum();
}

inline double state_entropy(const StateMoments& st) {
    double h = 0.5 * (kLog2Pi + 1.0 + std::log(st.marginal[0].variance));
    for (std::size_t t = 1; t < st.marginal.size(); ++t) {
        const double cond = st.marginal[t].variance - st.lag_one[t - 1] * st.lag_one[t - 1] / st.marginal[t - 1].variance;
        if (!(cond > 0.0)) throw NumericalError("state posterior lost positive definiteness");
        h += 0.5 * (kLog2Pi + 1.0 + std::log(cond));
    }
    return h;
}

inline double first_observation(const Segment& seg) {
    for (const auto& y : seg.observations)
        if (y) return *y;
    return 20.0;
}

class VariationalFit {
public:
    VariationalFit(std::vector<Segment> segments, const FitOptions& opts)
        : segments_(std::move(segments)), opts_(opts), mu_(Eigen::VectorXd::Zero(kCoefficientCount)),
          cov_(Eigen::MatrixXd::Identity(kCoefficientCount, kCoefficientCount)) {
        const double a0 = opts_.priors.gamma_shape, b0 = opts_.priors.gamma_rate;
        tau_p_ = tau_o_ = GammaFactor{a0, b0};
        ard_.fill(GammaFactor{a0, b0});
        for (const auto& seg : segments_) {
            for (const auto& y : seg.observations) n_obs_ += y.has_value();
            n_trans_ += seg.size() - 1;
        }
        init_states();
    }

    /// Runs coordinate ascent; the loop order is state, coefficients,
    /// precisions, ARD.
    GrayboxPosterior run() {
        // warm start from a state posterior pinned to the observations
        update_coefficients();
        update_precisions();
        update_ard();
        double previous = elbo();
        GrayboxPosterior post;
        for (std::size_t it = 1; it <= opts_.max_iters; ++it) {
            update_states();
            update_coefficients();
            update_precisions();
            update_ard();
            const double value = elbo();
            if (!std::isfinite(value)) throw NumericalError("ELBO became non-finite");
            post.elbo_trace.push_back(value);
            post.observation_precision_trace.push_back(tau_o_.mean());
            post.iterations = it;
            if (value < previous - 1e-6 * std::abs(previous))
                throw ConvergenceError("ELBO decreased from " + std::to_string(previous) + " to " +
                                       std::to_string(value));
            const double change = std::abs(value - previous) / std::max(std::abs(previous), 1e-300);
            previous = value;
            if (change < opts_.tol) {
                post.converged = true;
                break;
            }
        }
        export_to(post);
        return post;
    }

    double elbo() const {
        const double a0 = opts_.priors.gamma_shape, b0 = opts_.priors.gamma_rate;
        const Sufficient s = sufficient_statistics(segments_, states_);
        double value = 0.0;
        // observations
        double sq = 0.0;
        for (std::size_t k = 0; k < segments_.size(); ++k)
            for (std::size_t t = 0; t < segments_[k].size(); ++t)
                if (const auto& y = segments_[k].observations[t]) {
                    const auto& m = states_[k].marginal[t];
                    sq += (*y - m.mean) * (*y - m.mean) + m.variance;
                }
        value += 0.5 * static_cast<double>(n_obs_) * (tau_o_.mean_log() - kLog2Pi) - 0.5 * tau_o_.mean() * sq;
        // transitions
        value += 0.5 * static_cast<double>(s.transitions) * (tau_p_.mean_log() - kLog2Pi) -
                 0.5 * tau_p_.mean() * expected_residual(s, mu_, cov_);
        // initial states
        const double v0 = opts_.priors.initial_state_variance;
        for (std::size_t k = 0; k < segments_.size(); ++k) {
            const auto& m = states_[k].marginal[0];
            const double d = m.mean - first_observation(segments_[k]);
            value += -0.5 * (kLog2Pi + std::log(v0)) - (d * d + m.variance) / (2.0 * v0);
            value += state_entropy(states_[k]);
        }
        // coefficients and ARD
        for (std::size_t i = 0; i < kCoefficientCount; ++i) {
            value += 0.5 * (ard_[i].mean_log() - kLog2Pi) - 0.5 * ard_[i].mean() * (mu_(i) * mu_(i) + cov_(i, i));
            value += ard_[i].expected_log_prior(a0, b0) + ard_[i].entropy();
        }
        const Eigen::LLT<Eigen::MatrixXd> llt(cov_);
        const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
        value += 0.5 * (static_cast<double>(kCoefficientCount) * (kLog2Pi + 1.0) + logdet);
        value += tau_p_.expected_log_prior(a0, b0) + tau_p_.entropy();
        value += tau_o_.expected_log_prior(a0, b0) + tau_o_.entropy();
        return value;
    }

    void update_states() {
        const double abar = 1.0 - mu_(0) - mu_(1);
        const double s_uu = cov_(0, 0) + cov_(1, 1) + 2.0 * cov_(0, 1);
        const Eigen::VectorXd cov_u = cov_.col(0) + cov_.col(1);
        const double tp = tau_p_.mean();
        for (std::size_t k = 0; k < segments_.size(); ++k) {
            const auto& seg = segments_[k];
            ScalarChain chain;
            chain.transition = abar;
            chain.process_variance = 1.0 / tp;
            chain.observation_variance = 1.0 / tau_o_.mean();
            chain.initial = {first_observation(seg), opts_.priors.initial_state_variance};
            chain.observations = seg.observations;
            chain.drive.assign(seg.size(), 0.0);
            chain.evidence.assign(seg.size(), Gaussian{0.0, std::numeric_limits<double>::infinity()});
            for (std::size_t t = 1; t < seg.size(); ++t) {
                const SparseRow c = regressor(seg.inputs[t]);
                double drive = 0.0, s_uc = 0.0;
                for (std::size_t i = 0; i < 4; ++i) {
                    drive += mu_(c.idx[i]) * c.val[i];
                    s_uc += cov_u(c.idx[i]) * c.val[i];
                }
                chain.drive[t] = drive;
                // coefficient uncertainty acts as evidence on x_{t-1}
                chain.evidence[t - 1] = {s_uc / s_uu, 1.0 / (tp * s_uu)};
            }
            const FilterResult f = filter(chain);
            SmootherResult sm = smooth(f, abar);
            states_[k].marginal = std::move(sm.smoothed);
            states_[k].lag_one = std::move(sm.lag_one);
        }
    }

    void update_coefficients() {
        const Sufficient s = sufficient_statistics(segments_, states_);
        Eigen::MatrixXd precision = tau_p_.mean() * s.phi_phi;
        for (std::size_t i = 0; i < kCoefficientCount; ++i) precision(i, i) += ard_[i].mean();
        const Eigen::LLT<Eigen::MatrixXd> llt(precision);
        if (llt.info() != Eigen::Success) throw NumericalError("coefficient precision is not positive definite");
        cov_ = llt.solve(Eigen::MatrixXd::Identity(kCoefficientCount, kCoefficientCount));
        cov_ = 0.5 * (cov_ + cov_.transpose());
        mu_ = cov_ * (tau_p_.mean() * s.phi_d);
    }

    void update_precisions() {
        const double a0 = opts_.priors.gamma_shape, b0 = opts_.priors.gamma_rate;
        const Sufficient s = sufficient_statistics(segments_, states_);
        tau_p_ = {a0 + 0.5 * static_cast<double>(s.transitions), b0 + 0.5 * expected_residual(s, mu_, cov_)};
        double sq = 0.0;
        for (std::size_t k = 0; k < segments_.size(); ++k)
            for (std::size_t t = 0; t < segments_[k].size(); ++t)
                if (const auto& y = segments_[k].observations[t]) {
                    const auto& m = states_[k].marginal[t];
                    sq += (*y - m.mean) * (*y - m.mean) + m.variance;
                }
        tau_o_ = {a0 + 0.5 * static_cast<double>(n_obs_), b0 + 0.5 * sq};
    }

    void update_ard() {
        const double a0 = opts_.priors.gamma_shape, b0 = opts_.priors.gamma_rate;
        for (std::size_t i = 0; i < kCoefficientCount; ++i)
            ard_[i] = {a0 + 0.5, b0 + 0.5 * (mu_(i) * mu_(i) + cov_(i, i))};
    }

    const GammaFactor& process_precision() const { return tau_p_; }
    const GammaFactor& observation_precision() const { return tau_o_; }
    std::size_t observation_count() const { return n_obs_; }
    std::size_t transition_count() const { return n_trans_; }

private:
    void init_states() {
        states_.resize(segments_.size());
        for (std::size_t k = 0; k < segments_.size(); ++k) {
            const auto& seg = segments_[k];
            auto& st = states_[k];
            st.marginal.assign(seg.size(), Gaussian{first_observation(seg), 0.01});
            st.lag_one.assign(seg.size() > 0 ? seg.size() - 1 : 0, 0.0);
            double last = first_observation(seg);
            for (std::size_t t = 0; t < seg.size(); ++t) {
                if (seg.observations[t]) last = *seg.observations[t];
                st.marginal[t].mean = last;
            }
        }
    }

    void export_to(GrayboxPosterior& post) const {
        for (std::size_t i = 0; i < kCoefficientCount; ++i) post.coeffs[i] = {mu_(i), cov_(i, i)};
        post.coeff_cov = cov_;
        post.process_precision = tau_p_;
        post.observation_precision = tau_o_;
        post.ard = ard_;
        post.priors = opts_.priors;
        for (std::size_t k = 0; k < segments_.size(); ++k) {
            post.state_times.insert(post.state_times.end(), segments_[k].times.begin(), segments_[k].times.end());
            post.state.insert(post.state.end(), states_[k].marginal.begin(), states_[k].marginal.end());
            post.rows += segments_[k].size();
        }
    }

    std::vector<Segment> segments_;
    FitOptions opts_;
    std::vector<StateMoments> states_;
    Eigen::VectorXd mu_;
    Eigen::MatrixXd cov_;
    GammaFactor tau_p_, tau_o_;
    std::array<GammaFactor, kCoefficientCount> ard_{};
    std::size_t n_obs_ = 0;
    std::size_t n_trans_ = 0;
};

}  // namespace detail

/// Splits the most recent `max_rows` records into contiguous segments.
inline std::vector<Segment> make_segments(const BuildingDataset& dataset, std::size_t max_rows) {
    const auto all = dataset.records();
    const auto records = all.size() > max_rows ? all.subspan(all.size() - max_rows) : all;
    const auto solar = make_solar_provider(dataset.site().latitude, dataset.site().longitude);
    std::vector<Segment> segments;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (i == 0 || records[i].timestamp - records[i - 1].timestamp != Hours{1}) segments.emplace_back();
        auto& seg = segments.back();
        seg.times.push_back(records[i].timestamp);
        seg.inputs.push_back(make_input_row(records[i], dataset.site(), solar));
        seg.observations.emplace_back(records[i].t_in);
    }
    return segments;
}

inline GrayboxPosterior fit_variational(const BuildingDataset& dataset, const FitOptions& opts = {}) {
    if (dataset.size() < opts.min_rows)
        throw InsufficientDataError("gray-box fit needs at least " + std::to_string(opts.min_rows) + " rows");
    auto segments = make_segments(dataset, opts.max_rows);
    detail::VariationalFit fit(std::move(segments), opts);
    return fit.run();
}

/// Rolls the expected-coefficient recurrence forward from `last_state`.
/// Coefficient uncertainty is not propagated.
inline ForecastResult forecast(const GrayboxPosterior& post, Gaussian last_state, std::span<const InputRow> future) {
    if (future.empty()) throw ConfigError("forecast horizon must be >= 1");
    const PointParams p = post.expected();
    const double a = p.transition();
    ForecastResult out;
    Gaussian g = last_state;
    for (const auto& in : future) {
        g.mean = a * g.mean + p.drive(in);
        g.variance = a * a * g.variance + p.process_variance;
        out.mean.push_back(g.mean);
        out.step_std.push_back(std::sqrt(g.variance + p.observation_variance));
    }
    out.accumulate();
    return out;
}

/// Filtered state at the last record of `history` (its contiguous tail).
inline Gaussian filter_state(const GrayboxPosterior& post, std::span<const HourlyRecord> history,
                             const SiteMeta& site) {
    if (history.empty()) throw InsufficientHistoryError("no history to filter");
    std::size_t begin = history.size() - 1;
    while (begin > 0 && history[begin].timestamp - history[begin - 1].timestamp == Hours{1}) --begin;
    const auto tail = history.subspan(begin);
    const auto solar = make_solar_provider(site.latitude, site.longitude);
    std::vector<InputRow> inputs;
    std::vector<std::optional<double>> obs;
    for (const auto& r : tail) {
        inputs.push_back(make_input_row(r, site, solar));
        obs.emplace_back(r.t_in);
    }
    const auto p = post.expected();
    ScalarChain chain = make_chain(obs, inputs, p, {tail.front().t_in, post.priors.initial_state_variance});
    return filter(chain).filtered.back();
}

// ---------------------------------------------------------------------------
// Checkpoint

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json gamma_to_json(const GammaFactor& g) { return {{"shape", g.shape}, {"rate", g.rate}}; }
inline GammaFactor gamma_from_json(const nlohmann::json& j) {
    return {j.at("shape").get<double>(), j.at("rate").get<double>()};
}

inline nlohmann::json to_json(const GrayboxPosterior& post) {
    nlohmann::json j;
    j["format_version"] = kCheckpointVersion;
    j["kind"] = "graybox";
    nlohmann::json coeffs = nlohmann::json::array();
    for (const auto& c : post.coeffs) coeffs.push_back({{"mean", c.mean}, {"variance", c.variance}});
    j["coeffs"] = coeffs;
    nlohmann::json cov = nlohmann::json::array();
    for (Eigen::Index r = 0; r < post.coeff_cov.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < post.coeff_cov.cols(); ++c) row.push_back(post.coeff_cov(r, c));
        cov.push_back(row);
    }
    j["coeff_cov"] = cov;
    j["process_precision"] = gamma_to_json(post.process_precision);
    j["observation_precision"] = gamma_to_json(post.observation_precision);
    nlohmann::json ard = nlohmann::json::array();
    for (const auto& g : post.ard) ard.push_back(gamma_to_json(g));
    j["ard"] = ard;
    j["elbo_trace"] = post.elbo_trace;
    j["priors"] = {{"gamma_shape", post.priors.gamma_shape},
                   {"gamma_rate", post.priors.gamma_rate},
                   {"initial_state_variance", post.priors.initial_state_variance}};
    j["metadata"] = {{"rows", post.rows}, {"iterations", post.iterations}, {"converged", post.converged}};
    if (!post.state.empty()) {
        j["last_state"] = {{"timestamp", format_iso8601(post.state_times.back())},
                           {"mean", post.state.back().mean},
                           {"variance", post.state.back().variance}};
    }
    return j;
}

inline GrayboxPosterior from_json(const nlohmann::json& j) {
    try {
        if (j.at("kind").get<std::string>() != "graybox") throw ConfigError("checkpoint is not a gray-box model");
        if (j.at("format_version").get<int>() != kCheckpointVersion)
            throw ConfigError("unsupported gray-box checkpoint version");
        GrayboxPosterior post;
        const auto& coeffs = j.at("coeffs");
        if (coeffs.size() != kCoefficientCount) throw ConfigError("checkpoint must hold 51 coefficients");
        for (std::size_t i = 0; i < kCoefficientCount; ++i)
            post.coeffs[i] = {coeffs[i].at("mean").get<double>(), coeffs[i].at("variance").get<double>()};
        const auto& cov = j.at("coeff_cov");
        for (std::size_t r = 0; r < kCoefficientCount; ++r)
            for (std::size_t c = 0; c < kCoefficientCount; ++c)
                post.coeff_cov(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = cov.at(r).at(c).get<double>();
        post.process_precision = gamma_from_json(j.at("process_precision"));
        post.observation_precision = gamma_from_json(j.at("observation_precision"));
        for (std::size_t i = 0; i < kCoefficientCount; ++i) post.ard[i] = gamma_from_json(j.at("ard").at(i));
        post.elbo_trace = j.at("elbo_trace").get<std::vector<double>>();
        const auto& pr = j.at("priors");
        post.priors = {pr.at("gamma_shape").get<double>(), pr.at("gamma_rate").get<double>(),
                       pr.at("initial_state_variance").get<double>()};
        const auto& meta = j.at("metadata");
        post.rows = meta.at("rows").get<std::size_t>();
        post.iterations = meta.at("iterations").get<std::size_t>();
        post.converged = meta.at("converged").get<bool>();
        if (j.contains("last_state")) {
            const auto& s = j.at("last_state");
            post.state_times.push_back(parse_iso8601(s.at("timestamp").get<std::string>()));
            post.state.push_back({s.at("mean").get<double>(), s.at("variance").get<double>()});
        }
        return post;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("gray-box checkpoint: ") + e.what());
    }
}

}  // namespace thermocast::graybox
