#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "thermocast/error.hpp"
#include "thermocast/solar.hpp"
#include "thermocast/time.hpp"

namespace thermocast {

/// Sequence length of a feature window.
inline constexpr std::size_t kWindowLength = 7;
/// Columns: t_sup - t_in, t_out - t_in, ghi, elevation, azimuth, hour-of-week.
inline constexpr std::size_t kFeatureCount = 6;
/// Index of the hour-of-week column; it is never z-scored.
inline constexpr std::size_t kHourOfWeekColumn = 5;
/// The hour-of-week column takes values 1..kHourOfWeekSlots.
inline constexpr std::size_t kHourOfWeekSlots = 48;

struct HourlyRecord {
    Instant timestamp{};
    double t_in = 0.0;
    double t_sup = 0.0;
    double t_out = 0.0;
    double ghi = 0.0;
};

struct SiteMeta {
    double latitude = 0.0;
    double longitude = 0.0;
    int utc_offset_hours = 0;
    std::set<std::chrono::year_month_day> holidays;

    void validate() const {
        if (!(latitude >= -90.0 && latitude <= 90.0)) throw ConfigError("latitude outside [-90, 90]");
        if (!(longitude >= -180.0 && longitude <= 180.0)) throw ConfigError("longitude outside [-180, 180]");
        if (utc_offset_hours < -14 || utc_offset_hours > 14) throw ConfigError("utc_offset_hours outside [-14, 14]");
    }

    Instant to_local(Instant t) const { return t + Hours{utc_offset_hours}; }
};

inline bool in_heating_season(Instant t, const SiteMeta& site) {
    using namespace std::chrono;
    const year_month_day ymd{floor<days>(site.to_local(t))};
    const unsigned m = static_cast<unsigned>(ymd.month());
    return m >= 9 || m <= 5;
}

/// Hourly measurements of one building, restricted to the heating season
/// (September to May, local calendar). Construction validates ordering,
/// hour alignment and finiteness.
class BuildingDataset {
public:
    BuildingDataset() = default;

    BuildingDataset(SiteMeta site, std::vector<HourlyRecord> records) : site_(std::move(site)) {
        site_.validate();
        records_.reserve(records.size());
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto& r = records[i];
            if (!is_hour_aligned(r.timestamp))
                throw DataError("record " + std::to_string(i) + " is not aligned to an hour boundary");
            if (!std::isfinite(r.t_in) || !std::isfinite(r.t_sup) || !std::isfinite(r.t_out) || !std::isfinite(r.ghi))
                throw DataError("record " + std::to_string(i) + " has a non-finite value");
            if (r.ghi < 0.0) throw DataError("record " + std::to_string(i) + " has negative ghi");
            if (i > 0 && r.timestamp <= records[i - 1].timestamp)
                throw DataError("record " + std::to_string(i) + " is not strictly after its predecessor");
            if (in_heating_season(r.timestamp, site_)) records_.push_back(r);
        }
    }

    const SiteMeta& site() const { return site_; }
    std::span<const HourlyRecord> records() const { return records_; }
    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }

    /// Number of places where consecutive records are more than one hour apart.
    std::size_t gap_count() const {
        std::size_t gaps = 0;
        for (std::size_t i = 1; i < records_.size(); ++i)
            if (records_[i].timestamp - records_[i - 1].timestamp != Hours{1}) ++gaps;
        return gaps;
    }
    bool has_gaps() const { return gap_count() > 0; }

    /// Index of the record at exactly `t`, or npos.
    std::size_t find(Instant t) const {
        const auto it = std::lower_bound(records_.begin(), records_.end(), t,
                                         [](const HourlyRecord& r, Instant v) { return r.timestamp < v; });
        if (it == records_.end() || it->timestamp != t) return npos;
        return static_cast<std::size_t>(it - records_.begin());
    }

    /// Records with timestamps in [from, to).
    BuildingDataset slice(Instant from, Instant to) const {
        BuildingDataset out;
        out.site_ = site_;
        for (const auto& r : records_)
            if (r.timestamp >= from && r.timestamp < to) out.records_.push_back(r);
        return out;
    }

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

private:
    SiteMeta site_;
    std::vector<HourlyRecord> records_;
};

/// Hour-of-week slot: local hour + 1 on weekends and holidays, local hour + 25
/// on business days.
inline int hour_of_week_index(Instant t, const SiteMeta& site) {
    using namespace std::chrono;
    const auto local = site.to_local(t);
    const auto day = floor<days>(local);
    const int hour = static_cast<int>(floor<hours>(local - day).count());
    const weekday wd{day};
    const bool business = wd != Saturday && wd != Sunday && !site.holidays.contains(year_month_day{day});
    return business ? hour + 25 : hour + 1;
}

/// Exogenous inputs at one hour: everything a forecast needs except t_in.
struct InputRow {
    Instant timestamp{};
    double t_sup = 0.0;
    double t_out = 0.0;
    double ghi = 0.0;
    double elevation = 0.0;
    double azimuth = 0.0;
    int hour_of_week = 1;
};

inline InputRow make_input_row(const HourlyRecord& r, const SiteMeta& site, const SolarProvider& solar) {
    const SolarPosition sun = solar(r.timestamp);
    return {r.timestamp, r.t_sup, r.t_out, r.ghi, sun.elevation, sun.azimuth, hour_of_week_index(r.timestamp, site)};
}

inline std::vector<InputRow> make_input_rows(std::span<const HourlyRecord> records, const SiteMeta& site,
                                             const SolarProvider& solar) {
    std::vector<InputRow> rows;
    rows.reserve(records.size());
    for (const auto& r : records) rows.push_back(make_input_row(r, site, solar));
    return rows;
}

using FeatureRow = std::array<double, kFeatureCount>;

inline FeatureRow feature_row(const InputRow& in, double t_in) {
    return {in.t_sup - t_in, in.t_out - t_in, in.ghi, in.elevation, in.azimuth, static_cast<double>(in.hour_of_week)};
}

/// Per-column z-score statistics. The hour-of-week column keeps mean 0 and
/// std 1 so it passes through unchanged.
struct NormStats {
    std::array<double, kFeatureCount> mean{};
    std::array<double, kFeatureCount> std{1, 1, 1, 1, 1, 1};

    double normalize(std::size_t col, double v) const { return (v - mean[col]) / std[col]; }
    double denormalize(std::size_t col, double v) const { return v * std[col] + mean[col]; }

    FeatureRow normalize(const FeatureRow& row) const {
        FeatureRow out;
        for (std::size_t c = 0; c < kFeatureCount; ++c) out[c] = normalize(c, row[c]);
        return out;
    }
    FeatureRow denormalize(const FeatureRow& row) const {
        FeatureRow out;
        for (std::size_t c = 0; c < kFeatureCount; ++c) out[c] = denormalize(c, row[c]);
        return out;
    }
};

/// Windowed samples: inputs are N x L x M raw (unnormalized) features stored
/// row-major, targets are raw one-hour temperature changes.
struct SupervisedSet {
    std::size_t window_length = kWindowLength;
    std::vector<double> inputs;
    std::vector<double> targets;
    NormStats norm_stats;
    std::vector<Instant> index;

    std::size_t size() const { return targets.size(); }
    std::size_t stride() const { return window_length * kFeatureCount; }

    std::span<const double> window(std::size_t i) const { return {inputs.data() + i * stride(), stride()}; }

    /// Inputs after applying norm_stats, same layout as `inputs`.
    std::vector<double> normalized_inputs() const {
        std::vector<double> out(inputs.size());
        for (std::size_t k = 0; k < inputs.size(); ++k) {
            const std::size_t col = k % kFeatureCount;
            out[k] = norm_stats.normalize(col, inputs[k]);
        }
        return out;
    }

    SupervisedSet subset(std::size_t begin, std::size_t end) const {
        SupervisedSet out;
        out.window_length = window_length;
        out.norm_stats = norm_stats;
        out.inputs.assign(inputs.begin() + static_cast<std::ptrdiff_t>(begin * stride()),
                          inputs.begin() + static_cast<std::ptrdiff_t>(end * stride()));
        out.targets.assign(targets.begin() + static_cast<std::ptrdiff_t>(begin),
                           targets.begin() + static_cast<std::ptrdiff_t>(end));
        out.index.assign(index.begin() + static_cast<std::ptrdiff_t>(begin),
                         index.begin() + static_cast<std::ptrdiff_t>(end));
        return out;
    }
};

/// Mean / std over every window row of samples [0, count). Zero spread maps to 1.
inline NormStats compute_norm_stats(const SupervisedSet& set, std::size_t count) {
    NormStats stats;
    const std::size_t rows = count * set.window_length;
    if (rows == 0) return stats;
    for (std::size_t c = 0; c < kFeatureCount; ++c) {
        if (c == kHourOfWeekColumn) continue;
        double sum = 0.0;
        for (std::size_t r = 0; r < rows; ++r) sum += set.inputs[r * kFeatureCount + c];
        const double mean = sum / static_cast<double>(rows);
        double ss = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
            const double d = set.inputs[r * kFeatureCount + c] - mean;
            ss += d * d;
        }
        const double sd = std::sqrt(ss / static_cast<double>(rows));
        stats.mean[c] = mean;
        stats.std[c] = sd > 1e-12 ? sd : 1.0;
    }
    return stats;
}

inline std::size_t split_point(double ratio, std::size_t n) {
    return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}

/// One sample per hour t with contiguous records t-6h..t+1h. Norm stats come
/// from the first floor(train_ratio * N) samples.
inline SupervisedSet build_supervised(const BuildingDataset& dataset, const SolarProvider& solar,
                                      double train_ratio = 1.0) {
    const auto records = dataset.records();
    const std::size_t L = kWindowLength;
    SupervisedSet set;
    if (records.size() < L + 1) throw EmptyDatasetError("dataset has fewer than L+1 records");

    const auto rows = make_input_rows(records, dataset.site(), solar);
    // run[i]: number of contiguous hourly records ending at i
    std::vector<std::size_t> run(records.size(), 1);
    for (std::size_t i = 1; i < records.size(); ++i)
        if (records[i].timestamp - records[i - 1].timestamp == Hours{1}) run[i] = run[i - 1] + 1;

    for (std::size_t i = L - 1; i + 1 < records.size(); ++i) {
        if (run[i + 1] < L + 1) continue;
        for (std::size_t k = i + 1 - L; k <= i; ++k) {
            const FeatureRow f = feature_row(rows[k], records[k].t_in);
            set.inputs.insert(set.inputs.end(), f.begin(), f.end());
        }
        set.targets.push_back(records[i + 1].t_in - records[i].t_in);
        set.index.push_back(records[i].timestamp);
    }
    if (set.targets.empty()) throw EmptyDatasetError("no contiguous window of L+1 records exists");

    const std::size_t n_train = train_ratio >= 1.0 ? set.size() : split_point(train_ratio, set.size());
    set.norm_stats = compute_norm_stats(set, n_train == 0 ? set.size() : n_train);
    return set;
}

/// Earliest floor(ratio * N) samples vs the rest; both carry stats of the first.
inline std::pair<SupervisedSet, SupervisedSet> chronological_split(const SupervisedSet& set, double ratio) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must lie in (0, 1)");
    const std::size_t n = set.size();
    const std::size_t cut = split_point(ratio, n);
    if (n < 2 || cut == 0 || cut >= n) throw InsufficientDataError("split would leave an empty partition");
    auto first = set.subset(0, cut);
    auto second = set.subset(cut, n);
    first.norm_stats = compute_norm_stats(first, first.size());
    second.norm_stats = first.norm_stats;
    return {std::move(first), std::move(second)};
}

}  // namespace thermocast
