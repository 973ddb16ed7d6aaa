#pragma once

#include <chrono>
#include <cstdio>
#include <string>
#include <string_view>

#include "thermocast/error.hpp"

namespace thermocast {

/// UTC instant with one-second resolution. Records live on hour boundaries.
using Instant = std::chrono::sys_seconds;
using Hours = std::chrono::hours;

inline bool is_hour_aligned(Instant t) {
    return t.time_since_epoch().count() % 3600 == 0;
}

inline Instant make_instant(int year, unsigned month, unsigned day, int hour = 0) {
    using namespace std::chrono;
    const year_month_day ymd{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}};
    if (!ymd.ok()) throw DataError("invalid calendar date");
    return sys_days{ymd} + hours{hour};
}

/// Parses `YYYY-MM-DDTHH:MM:SSZ`. Only the UTC designator is accepted.
inline Instant parse_iso8601(std::string_view text) {
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
    char tail = 0;
    const std::string buf(text);
    int consumed = 0;
    if (std::sscanf(buf.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%c%n", &y, &mo, &d, &h, &mi, &s, &tail, &consumed) != 7 ||
        tail != 'Z' || static_cast<std::size_t>(consumed) != buf.size() || buf.size() != 20) {
        throw DataError("malformed ISO 8601 timestamp '" + buf + "'");
    }
    if (h > 23 || mi > 59 || s > 59 || mo < 1 || mo > 12 || d < 1) {
        throw DataError("timestamp out of range '" + buf + "'");
    }
    return make_instant(y, static_cast<unsigned>(mo), static_cast<unsigned>(d), h) + std::chrono::minutes{mi} +
           std::chrono::seconds{s};
}

inline std::string format_iso8601(Instant t) {
    using namespace std::chrono;
    const auto day = floor<days>(t);
    const year_month_day ymd{day};
    const hh_mm_ss hms{t - day};
    char out[32];
    std::snprintf(out, sizeof out, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                  static_cast<int>(hms.seconds().count()));
    return out;
}

inline std::chrono::year_month_day parse_date(std::string_view text) {
    int y = 0, m = 0, d = 0, consumed = 0;
    const std::string buf(text);
    if (std::sscanf(buf.c_str(), "%4d-%2d-%2d%n", &y, &m, &d, &consumed) != 3 || consumed != 10 ||
        buf.size() != 10) {
        throw ConfigError("malformed date '" + buf + "', expected YYYY-MM-DD");
    }
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(m)},
                                          std::chrono::day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) throw ConfigError("invalid date '" + buf + "'");
    return ymd;
}

inline std::string format_date(std::chrono::year_month_day ymd) {
    char out[16];
    std::snprintf(out, sizeof out, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()));
    return out;
}

/// Day of year, 1-based.
inline int day_of_year(Instant t) {
    using namespace std::chrono;
    const auto day = floor<days>(t);
    const year_month_day ymd{day};
    return static_cast<int>((day - sys_days{ymd.year() / January / 1}).count()) + 1;
}

}  // namespace thermocast
