#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "thermocast/error.hpp"
#include "thermocast/timeseries.hpp"

namespace thermocast::io {

inline constexpr std::string_view kDatasetHeader = "timestamp,t_in,t_sup,t_out,ghi";

/// Shortest decimal representation that round-trips.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view field, std::size_t line) {
    double v = 0.0;
    const auto* end = field.data() + field.size();
    const auto res = std::from_chars(field.data(), end, v);
    if (res.ec != std::errc{} || res.ptr != end)
        throw DataError("line " + std::to_string(line) + ": cannot parse number '" + std::string(field) + "'");
    return v;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::vector<HourlyRecord> read_records_csv(std::istream& in) {
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line)) throw DataError("line 1: missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kDatasetHeader)
        throw DataError("line 1: unexpected header '" + line + "', expected '" + std::string(kDatasetHeader) + "'");
    std::vector<HourlyRecord> records;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != 5)
            throw DataError("line " + std::to_string(line_no) + ": expected 5 fields, got " +
                            std::to_string(fields.size()));
        HourlyRecord r;
        try {
            r.timestamp = parse_iso8601(fields[0]);
        } catch (const DataError& e) {
            throw DataError("line " + std::to_string(line_no) + ": " + e.what());
        }
        r.t_in = parse_double(fields[1], line_no);
        r.t_sup = parse_double(fields[2], line_no);
        r.t_out = parse_double(fields[3], line_no);
        r.ghi = parse_double(fields[4], line_no);
        records.push_back(r);
    }
    return records;
}

inline void write_records_csv(std::ostream& out, std::span<const HourlyRecord> records) {
    out << kDatasetHeader << '\n';
    for (const auto& r : records) {
        out << format_iso8601(r.timestamp) << ',' << format_double(r.t_in) << ',' << format_double(r.t_sup) << ','
            << format_double(r.t_out) << ',' << format_double(r.ghi) << '\n';
    }
}

inline nlohmann::json site_to_json(const SiteMeta& site) {
    nlohmann::json holidays = nlohmann::json::array();
    for (const auto& d : site.holidays) holidays.push_back(format_date(d));
    return {{"latitude", site.latitude},
            {"longitude", site.longitude},
            {"utc_offset_hours", site.utc_offset_hours},
            {"holidays", holidays}};
}

inline SiteMeta site_from_json(const nlohmann::json& j) {
    SiteMeta site;
    try {
        site.latitude = j.at("latitude").get<double>();
        site.longitude = j.at("longitude").get<double>();
        site.utc_offset_hours = j.value("utc_offset_hours", 0);
        if (j.contains("holidays"))
            for (const auto& d : j.at("holidays")) site.holidays.insert(parse_date(d.get<std::string>()));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("site metadata: ") + e.what());
    }
    site.validate();
    return site;
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("'" + path + "': " + e.what());
    }
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << text;
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) { write_text_file(path, j.dump(2) + "\n"); }

inline SiteMeta read_site_json(const std::string& path) { return site_from_json(read_json_file(path)); }

inline BuildingDataset read_dataset(const std::string& csv_path, const SiteMeta& site) {
    std::ifstream in(csv_path);
    if (!in) throw DataError("cannot open dataset '" + csv_path + "'");
    return BuildingDataset(site, read_records_csv(in));
}

inline void write_dataset_csv(const std::string& path, const BuildingDataset& dataset) {
    std::ostringstream out;
    write_records_csv(out, dataset.records());
    write_text_file(path, out.str());
}

}  // namespace thermocast::io
