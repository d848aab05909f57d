// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "locsense/channel.hpp"
#include "locsense/core.hpp"
#include "locsense/geometry.hpp"

namespace locsense {

/// Rounded propagation speed used for the distance/velocity display of
/// resolution limits. Radar rules of thumb (75 cm at 400 MHz, 1 m/s at
/// 30 GHz with 10 ms integration) are quoted with c = 3e8; the raw limits
/// in seconds and hertz are exact and convention-free.
inline constexpr double kRoundedSpeedOfLight = 3.0e8;

/// Two paths are separable when they differ by more than 1/W in delay,
/// 1/(K Ts) in Doppler, or about 2/N elements-per-axis in angle (any one
/// domain suffices).
struct ResolutionReport {
    double delay_res_s = 0.0;     // 1 / W
    double delay_res_m = 0.0;     // times rounded c
    double doppler_res_hz = 0.0;  // 1 / (K Ts)
    double velocity_res_mps = 0.0;  // times lambda (one-way convention)
    double angular_res_az_rad = 0.0;  // 2 / N^az at boresight
    double angular_res_el_rad = 0.0;  // 2 / N^el at boresight
};

namespace detail {

/// Number of lambda/2-spaced elements the array spans along an axis.
/// The boresight angular limit 2/N counts effective half-wavelength
/// elements, so a wider-spaced array of equal aperture resolves equally.
inline double effective_axis_elements(const ArrayGeometry& array, int axis) {
    double span = array.element_positions_wl.row(axis).maxCoeff() -
                  array.element_positions_wl.row(axis).minCoeff();
    return 1.0 + span / 0.5;
}

}  // namespace detail

inline ResolutionReport resolution_limits(const GridConfig& grid,
                                          const ArrayGeometry& array) {
    ResolutionReport r;
    r.delay_res_s = 1.0 / grid.bandwidth();
    r.delay_res_m = kRoundedSpeedOfLight * r.delay_res_s;
    r.doppler_res_hz = 1.0 / (grid.n_symbols * grid.symbol_duration);
    r.velocity_res_mps = (kRoundedSpeedOfLight / grid.carrier) * r.doppler_res_hz;
    // An axis without aperture cannot separate angles at all; pi (the
    // largest possible wrapped difference) encodes that while keeping the
    // report strictly positive.
    double n_az = detail::effective_axis_elements(array, 1);
    double n_el = detail::effective_axis_elements(array, 2);
    r.angular_res_az_rad = n_az > 1.0 ? 2.0 / n_az : kPi;
    r.angular_res_el_rad = n_el > 1.0 ? 2.0 / n_el : kPi;
    return r;
}

/// Off-boresight azimuth limit, broadened by 1/cos(az). Approximate: the
/// exact beamwidth depends on the angle itself; flagged by the caller.
inline double angular_res_at(const ResolutionReport& r, double az_rad) {
    double c = std::cos(az_rad);
    if (std::abs(c) < 1e-6) return kPi;
    return std::min(kPi, r.angular_res_az_rad / std::abs(c));
}

struct ResolvableDomains {
    bool delay = false;
    bool doppler = false;
    bool angle = false;

    bool any() const { return delay || doppler || angle; }
};

/// Which domains separate the two parameter sets. Angle compares the AoA
/// azimuth/elevation against the boresight limits of the receive array.
inline ResolvableDomains resolvable(const GeoParams& p1, const GeoParams& p2,
                                    const ResolutionReport& report) {
    ResolvableDomains out;
    out.delay = std::abs(p1.delay - p2.delay) > report.delay_res_s;
    out.doppler = std::abs(p1.doppler - p2.doppler) > report.doppler_res_hz;
    out.angle = std::abs(angle_diff(p1.aoa(0), p2.aoa(0))) > report.angular_res_az_rad ||
                std::abs(p1.aoa(1) - p2.aoa(1)) > report.angular_res_el_rad;
    return out;
}

}  // namespace locsense
