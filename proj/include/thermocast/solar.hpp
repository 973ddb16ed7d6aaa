#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numbers>

#include "thermocast/time.hpp"

namespace thermocast {

struct SolarPosition {
    double elevation = 0.0;  // degrees, negative below the horizon
    double azimuth = 0.0;    // degrees in [0, 360), north = 0, clockwise
};

namespace solar {

inline constexpr double kDeg = std::numbers::pi / 180.0;

/// Declination (degrees) from Cooper's approximation.
inline double declination_deg(int day_of_year) {
    return 23.45 * std::sin(kDeg * 360.0 * (284.0 + day_of_year) / 365.0);
}

/// Equation of time in minutes.
inline double equation_of_time_min(int day_of_year) {
    const double b = kDeg * 360.0 * (day_of_year - 81.0) / 364.0;
    return 9.87 * std::sin(2.0 * b) - 7.53 * std::cos(b) - 1.5 * std::sin(b);
}

}  // namespace solar

/// Sun elevation/azimuth from a declination / hour-angle formulation with an
/// equation-of-time correction. No refraction correction.
inline SolarPosition solar_position(Instant t, double latitude, double longitude) {
    using namespace std::chrono;
    using solar::kDeg;
    const int n = day_of_year(t);
    const double utc_hours = duration<double, std::ratio<3600>>(t - floor<days>(t)).count();
    const double decl = solar::declination_deg(n) * kDeg;
    const double solar_time = utc_hours + longitude / 15.0 + solar::equation_of_time_min(n) / 60.0;
    const double hour_angle = 15.0 * (solar_time - 12.0) * kDeg;
    const double phi = latitude * kDeg;

    double sin_el = std::sin(decl) * std::sin(phi) + std::cos(decl) * std::cos(phi) * std::cos(hour_angle);
    sin_el = std::clamp(sin_el, -1.0, 1.0);
    const double elevation = std::asin(sin_el) / kDeg;

    // Measured from south, positive toward west; shifted to north-clockwise.
    double azimuth = std::atan2(std::sin(hour_angle),
                                std::cos(hour_angle) * std::sin(phi) - std::tan(decl) * std::cos(phi)) /
                         kDeg +
                     180.0;
    azimuth = std::fmod(azimuth, 360.0);
    if (azimuth < 0.0) azimuth += 360.0;
    return {elevation, azimuth};
}

/// Maps an instant to a sun position for one site.
using SolarProvider = std::function<SolarPosition(Instant)>;

inline SolarProvider make_solar_provider(double latitude, double longitude) {
    return [latitude, longitude](Instant t) { return solar_position(t, latitude, longitude); };
}

}  // namespace thermocast
