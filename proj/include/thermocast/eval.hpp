#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "thermocast/error.hpp"
#include "thermocast/time.hpp"
#include "thermocast/timeseries.hpp"

/// Forecast metrics over prediction matrices with one row per (building,
/// test instant) and one column per horizon step.
namespace thermocast::eval {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

inline void require_same_shape(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError("prediction and truth matrices differ in shape");
}

}  // namespace detail

/// Per row: RMSE over the first K horizon steps.
inline std::vector<double> horizon_rmse(const Matrix& truth, const Matrix& pred, std::size_t k) {
    detail::require_same_shape(truth, pred);
    if (k < 1 || k > static_cast<std::size_t>(truth.cols()))
        throw ShapeError("K must lie in [1, H], got " + std::to_string(k));
    std::vector<double> out(static_cast<std::size_t>(truth.rows()));
    for (Eigen::Index i = 0; i < truth.rows(); ++i) {
        double s = 0.0;
        for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(k); ++j) {
            const double e = truth(i, j) - pred(i, j);
            s += e * e;
        }
        out[static_cast<std::size_t>(i)] = std::sqrt(s / static_cast<double>(k));
    }
    return out;
}

/// Per column: RMSE over rows.
inline std::vector<double> drift_curve(const Matrix& truth, const Matrix& pred) {
    detail::require_same_shape(truth, pred);
    if (truth.rows() == 0) throw ShapeError("drift curve of an empty matrix");
    std::vector<double> out(static_cast<std::size_t>(truth.cols()));
    for (Eigen::Index j = 0; j < truth.cols(); ++j) {
        double s = 0.0;
        for (Eigen::Index i = 0; i < truth.rows(); ++i) {
            const double e = truth(i, j) - pred(i, j);
            s += e * e;
        }
        out[static_cast<std::size_t>(j)] = std::sqrt(s / static_cast<double>(truth.rows()));
    }
    return out;
}

/// Linear-interpolated sample quantile (R type 7).
inline double quantile(std::vector<double> values, double p) {
    if (values.empty()) throw InsufficientDataError("quantile of an empty sample");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

struct Summary {
    double median = 0.0;
    double q25 = 0.0;
    double q75 = 0.0;
    double q025 = 0.0;
    double q975 = 0.0;
};

inline Summary summarize(const std::vector<double>& v) {
    return {quantile(v, 0.5), quantile(v, 0.25), quantile(v, 0.75), quantile(v, 0.025), quantile(v, 0.975)};
}

// ---------------------------------------------------------------------------
// Weighted scores

struct WeightProfile {
    enum class Kind { unweighted, linear, sigmoid };
    Kind kind = Kind::unweighted;
    double midpoint = 12.0;
    double steepness = 3.0;

    static WeightProfile unweighted() { return {}; }
    static WeightProfile linear() { return {Kind::linear, 12.0, 3.0}; }
    static WeightProfile sigmoid(double midpoint = 12.0, double steepness = 3.0) {
        return {Kind::sigmoid, midpoint, steepness};
    }

    std::string name() const {
        switch (kind) {
            case Kind::unweighted: return "unweighted";
            case Kind::linear: return "linear";
            case Kind::sigmoid: return "sigmoid";
        }
        return "unweighted";
    }

    /// Normalized weights for steps j = 1..H.
    std::vector<double> weights(std::size_t h) const {
        if (h == 0) throw ConfigError("horizon must be >= 1");
        if (kind == Kind::sigmoid && !(steepness > 0.0)) throw ConfigError("sigmoid steepness must be positive");
        std::vector<double> w(h);
        for (std::size_t j = 1; j <= h; ++j) {
            const double x = static_cast<double>(j);
            switch (kind) {
                case Kind::unweighted: w[j - 1] = 1.0; break;
                case Kind::linear: w[j - 1] = static_cast<double>(h) - x + 1.0; break;
                case Kind::sigmoid: w[j - 1] = 1.0 / (1.0 + std::exp((x - midpoint) / steepness)); break;
            }
        }
        const double total = std::accumulate(w.begin(), w.end(), 0.0);
        for (auto& v : w) v /= total;
        if (kind == Kind::unweighted) std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(h));
        return w;
    }

    nlohmann::json to_json(std::size_t h) const {
        nlohmann::json j{{"kind", name()}};
        if (kind == Kind::sigmoid) {
            j["midpoint"] = midpoint;
            j["steepness"] = steepness;
            j["formula"] = "w(j) proportional to 1 / (1 + exp((j - midpoint) / steepness))";
        } else if (kind == Kind::linear) {
            j["formula"] = "w(j) proportional to H - j + 1";
        } else {
            j["formula"] = "w(j) = 1 / H";
        }
        j["weights"] = weights(h);
        return j;
    }
};

inline WeightProfile parse_profile(const std::string& name) {
    if (name == "unweighted") return WeightProfile::unweighted();
    if (name == "linear") return WeightProfile::linear();
    if (name == "sigmoid") return WeightProfile::sigmoid();
    throw ConfigError("unknown weight profile '" + name + "'");
}

inline double weighted_score(const std::vector<double>& drift, const WeightProfile& profile) {
    const auto w = profile.weights(drift.size());
    double s = 0.0;
    for (std::size_t j = 0; j < drift.size(); ++j) s += w[j] * drift[j];
    return s;
}

// ---------------------------------------------------------------------------
// Uncertainty vs error

/// Ranks starting at 1, ties get their average rank.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

struct RankCorrelation {
    double rho = 0.0;
    double p_value = 1.0;  // two-sided, t approximation with n - 2 degrees of freedom
    std::size_t n = 0;
};

inline RankCorrelation spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ShapeError("spearman: samples differ in length");
    if (x.size() < 3) throw InsufficientDataError("spearman needs at least 3 samples");
    RankCorrelation out;
    out.n = x.size();
    out.rho = pearson(average_ranks(x), average_ranks(y));
    const double df = static_cast<double>(out.n) - 2.0;
    if (std::abs(out.rho) >= 1.0) {
        out.p_value = 0.0;
    } else {
        const double t = out.rho * std::sqrt(df / (1.0 - out.rho * out.rho));
        const boost::math::students_t dist(df);
        out.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
    }
    return out;
}

struct UncertaintyBin {
    double std_lower = 0.0;
    double std_upper = 0.0;
    double mean_std = 0.0;
    double mean_abs_error = 0.0;
    std::size_t count = 0;
};

struct UncertaintyReport {
    std::vector<UncertaintyBin> bins;
    RankCorrelation correlation;
};

/// Equal-count bins by predictive std with the mean absolute error in each,
/// plus the Spearman correlation between std and error.
inline UncertaintyReport uncertainty_error_bins(const std::vector<double>& step_std, const std::vector<double>& abs_err,
                                                std::size_t bins) {
    if (step_std.size() != abs_err.size()) throw ShapeError("std and error samples differ in length");
    if (bins < 2) throw ConfigError("need at least 2 bins");
    const std::size_t n = step_std.size();
    if (n < bins) throw InsufficientDataError("fewer samples than bins");
    const auto [lo, hi] = std::minmax_element(step_std.begin(), step_std.end());
    if (*lo == *hi) throw InsufficientDataError("predictive std is constant; quantile bins are undefined");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return step_std[a] < step_std[b]; });
    UncertaintyReport out;
    for (std::size_t b = 0; b < bins; ++b) {
        const std::size_t begin = b * n / bins, end = (b + 1) * n / bins;
        if (begin == end) throw InsufficientDataError("empty uncertainty bin");
        UncertaintyBin bin;
        bin.std_lower = step_std[order[begin]];
        bin.std_upper = step_std[order[end - 1]];
        for (std::size_t k = begin; k < end; ++k) {
            bin.mean_std += step_std[order[k]];
            bin.mean_abs_error += abs_err[order[k]];
        }
        bin.count = end - begin;
        bin.mean_std /= static_cast<double>(bin.count);
        bin.mean_abs_error /= static_cast<double>(bin.count);
        out.bins.push_back(bin);
    }
    out.correlation = spearman(step_std, abs_err);
    return out;
}

// ---------------------------------------------------------------------------
// Test instants

/// Record indices usable as forecast origins: `window + 1` contiguous hours
/// ending at the origin, `horizon` contiguous hours after it, origin >= `from`.
inline std::vector<std::size_t> valid_origins(std::span<const HourlyRecord> records, std::size_t horizon,
                                              std::size_t window, std::size_t from = 0) {
    std::vector<std::size_t> run_back(records.size(), 1), run_fwd(records.size(), 1);
    for (std::size_t i = 1; i < records.size(); ++i)
        if (records[i].timestamp - records[i - 1].timestamp == Hours{1}) run_back[i] = run_back[i - 1] + 1;
    for (std::size_t i = records.size(); i-- > 1;)
        if (records[i].timestamp - records[i - 1].timestamp == Hours{1}) run_fwd[i - 1] = run_fwd[i] + 1;
    std::vector<std::size_t> out;
    for (std::size_t i = from; i < records.size(); ++i)
        if (run_back[i] >= window + 1 && run_fwd[i] >= horizon + 1) out.push_back(i);
    return out;
}

/// T evenly spaced origins over [from, end): the centers of T equal time
/// slices, each moved to the nearest unused valid origin.
inline std::vector<std::size_t> select_test_instants(std::span<const HourlyRecord> records, std::size_t count,
                                                     std::size_t horizon, std::size_t window, std::size_t from = 0) {
    if (count == 0) throw ConfigError("test instant count must be >= 1");
    const auto valid = valid_origins(records, horizon, window, from);
    if (valid.size() < count)
        throw InsufficientDataError("only " + std::to_string(valid.size()) + " valid test instants, need " +
                                    std::to_string(count));
    const auto t0 = records[valid.front()].timestamp;
    const double span = static_cast<double>((records[valid.back()].timestamp - t0).count());
    std::vector<bool> used(valid.size(), false);
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < count; ++k) {
        const double target = span * (2.0 * static_cast<double>(k) + 1.0) / (2.0 * static_cast<double>(count));
        auto offset = [&](std::size_t v) { return static_cast<double>((records[valid[v]].timestamp - t0).count()); };
        auto it = std::lower_bound(valid.begin(), valid.end(), target,
                                   [&](std::size_t idx, double t) { return static_cast<double>((records[idx].timestamp - t0).count()) < t; });
        std::size_t right = static_cast<std::size_t>(it - valid.begin());
        std::size_t left = right;  // search outward for the nearest unused candidate, earlier wins ties
        std::size_t pick = valid.size();
        double best = std::numeric_limits<double>::infinity();
        while (left > 0 || right < valid.size()) {
            if (left > 0) {
                --left;
                if (!used[left] && target - offset(left) < best) {
                    best = target - offset(left);
                    pick = left;
                }
            }
            if (right < valid.size()) {
                if (!used[right] && offset(right) - target < best) {
                    best = offset(right) - target;
                    pick = right;
                }
                ++right;
            }
            const double reach_left = left > 0 ? target - offset(left - 1) : std::numeric_limits<double>::infinity();
            const double reach_right = right < valid.size() ? offset(right) - target : std::numeric_limits<double>::infinity();
            if (pick != valid.size() && best <= reach_left && best <= reach_right) break;
        }
        used[pick] = true;
        out.push_back(valid[pick]);
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace thermocast::eval
