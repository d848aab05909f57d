// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <random>

#include "locsense/core.hpp"
#include "locsense/geometry.hpp"

namespace locsense {

// ---------------------------------------------------------------------------
// Arrays
// ---------------------------------------------------------------------------

/// Antenna array described by element positions in units of the carrier
/// wavelength. The element pattern is an amplitude gain per direction;
/// isotropic (1.0) by default. Patterns affect synthesis only - estimators
/// and bounds treat path gains as free parameters.
struct ArrayGeometry {
    Eigen::Matrix3Xd element_positions_wl;  // 3 x M, in wavelengths
    std::function<double(const Vec2&)> element_pattern;  // amplitude gain

    ArrayGeometry() : ArrayGeometry(single()) {}

    explicit ArrayGeometry(Eigen::Matrix3Xd positions,
                           std::function<double(const Vec2&)> pattern = nullptr)
        : element_positions_wl(std::move(positions)), element_pattern(std::move(pattern)) {
        if (element_positions_wl.cols() < 1)
            throw std::invalid_argument("array needs at least one element");
    }

    static ArrayGeometry single() {
        return ArrayGeometry(Eigen::Matrix3Xd::Zero(3, 1));
    }

    /// Uniform linear array along the y axis, first element at the origin.
    /// Default spacing is half a wavelength.
    static ArrayGeometry ula(int n_elements, double spacing_wl = 0.5) {
        if (n_elements < 1) throw std::invalid_argument("array needs at least one element");
        Eigen::Matrix3Xd p = Eigen::Matrix3Xd::Zero(3, n_elements);
        for (int m = 0; m < n_elements; ++m) p(1, m) = m * spacing_wl;
        return ArrayGeometry(std::move(p));
    }

    /// Uniform planar array in the y-z plane (boresight +x), y-major
    /// element order, first element at the origin.
    static ArrayGeometry upa(int n_y, int n_z, double spacing_wl = 0.5) {
        if (n_y < 1 || n_z < 1)
            throw std::invalid_argument("array needs at least one element per axis");
        Eigen::Matrix3Xd p = Eigen::Matrix3Xd::Zero(3, n_y * n_z);
        for (int iz = 0; iz < n_z; ++iz)
            for (int iy = 0; iy < n_y; ++iy) {
                p(1, iz * n_y + iy) = iy * spacing_wl;
                p(2, iz * n_y + iy) = iz * spacing_wl;
            }
        return ArrayGeometry(std::move(p));
    }

    Eigen::Index size() const { return element_positions_wl.cols(); }

    double pattern_gain(const Vec2& angle) const {
        return element_pattern ? element_pattern(angle) : 1.0;
    }
};

/// Array response for a plane wave from direction (az, el):
/// entry m = pattern(angle) * exp(+j 2 pi p_m . u(az, el)).
inline CVecX steering_vector(const ArrayGeometry& array, const Vec2& angle) {
    Vec3 u = direction_from_angles(angle(0), angle(1));
    double g = array.pattern_gain(angle);
    CVecX a(array.size());
    for (Eigen::Index m = 0; m < array.size(); ++m) {
        double phase = 2.0 * kPi * array.element_positions_wl.col(m).dot(u);
        a(m) = g * std::exp(kImag * phase);
    }
    return a;
}

inline Vec3 d_direction_d_az(double az, double el) {
    return Vec3(-std::cos(el) * std::sin(az), std::cos(el) * std::cos(az), 0.0);
}
inline Vec3 d_direction_d_el(double az, double el) {
    return Vec3(-std::sin(el) * std::cos(az), -std::sin(el) * std::sin(az), std::cos(el));
}

/// d a / d angle for an isotropic-element array: entry m picks up the
/// factor j 2 pi p_m . du. Element patterns are synthesis-only, so the
/// analytic derivative never needs a pattern slope.
inline CVecX steering_derivative(const ArrayGeometry& array, const Vec2& angle,
                                 bool wrt_azimuth) {
    Vec3 du = wrt_azimuth ? d_direction_d_az(angle(0), angle(1))
                          : d_direction_d_el(angle(0), angle(1));
    CVecX a = steering_vector(array, angle);
    for (Eigen::Index m = 0; m < a.size(); ++m)
        a(m) *= kImag * 2.0 * kPi * array.element_positions_wl.col(m).dot(du);
    return a;
}

// ---------------------------------------------------------------------------
// Paths and OFDM grid
// ---------------------------------------------------------------------------

enum class PathTag { LoS, NLoS, Object, Clutter };

/// One resolvable propagation path: complex gain plus geometry.
struct PathParams {
    cplx gain{1.0, 0.0};
    GeoParams geo;
    PathTag tag = PathTag::LoS;
};

/// Frequency/time sampling grid: N subcarriers spaced delta_f apart over K
/// symbols of duration symbol_duration, at the given carrier.
struct GridConfig {
    int n_subcarriers = 1;        // N
    double subcarrier_spacing = 15e3;  // delta_f [Hz]
    int n_symbols = 1;            // K
    double symbol_duration = 1.0 / 15e3;  // Ts [s]
    double carrier = 3.5e9;       // [Hz]

    GridConfig() = default;
    GridConfig(int n, double df, int k, double ts, double fc)
        : n_subcarriers(n), subcarrier_spacing(df), n_symbols(k), symbol_duration(ts),
          carrier(fc) {
        if (n < 1 || k < 1 || df <= 0.0 || ts <= 0.0 || fc <= 0.0)
            throw std::invalid_argument("invalid grid configuration");
    }

    double bandwidth() const { return n_subcarriers * subcarrier_spacing; }
    double wavelength() const { return kSpeedOfLight / carrier; }
};

/// Per-path phase factor of subcarrier n and symbol k:
/// exp(-j 2 pi n delta_f tau) * exp(+j 2 pi k Ts nu).
inline cplx grid_phase(const GridConfig& grid, int n, int k, double delay, double doppler) {
    double phase = -2.0 * kPi * n * grid.subcarrier_spacing * delay +
                   2.0 * kPi * k * grid.symbol_duration * doppler;
    return std::exp(kImag * phase);
}

/// Frequency-domain MIMO channel matrix at subcarrier n, symbol k:
/// sum over paths of gain * a_rx(aoa) a_tx(aod)^T * grid phase.
/// Note the transpose (not Hermitian) on the transmit response.
inline CMatX channel_matrix(const std::vector<PathParams>& paths, const GridConfig& grid,
                            const ArrayGeometry& rx_array, const ArrayGeometry& tx_array,
                            int n, int k) {
    if (n < 0 || n >= grid.n_subcarriers || k < 0 || k >= grid.n_symbols)
        throw std::out_of_range("subcarrier or symbol index out of range");
    CMatX h = CMatX::Zero(rx_array.size(), tx_array.size());
    for (const auto& p : paths) {
        CVecX arx = steering_vector(rx_array, p.geo.aoa);
        CVecX atx = steering_vector(tx_array, p.geo.aod);
        h.noalias() +=
            (p.gain * grid_phase(grid, n, k, p.geo.delay, p.geo.doppler)) *
            (arx * atx.transpose());
    }
    return h;
}

// ---------------------------------------------------------------------------
// Gain laws
// ---------------------------------------------------------------------------

/// Free-space LoS power gain: |alpha|^2 = lambda^2 Grx Gtx / ((4 pi)^2 d^2).
inline double los_gain(double distance_m, double carrier_hz, double g_tx = 1.0,
                       double g_rx = 1.0) {
    if (distance_m <= 0.0) throw DegenerateGeometryError("los_gain: zero distance");
    double lambda = kSpeedOfLight / carrier_hz;
    return lambda * lambda * g_rx * g_tx /
           (16.0 * kPi * kPi * distance_m * distance_m);
}

/// Monostatic radar power gain:
/// |alpha|^2 = lambda^2 rcs Grx Gtx / ((4 pi)^3 d^4).
inline double radar_gain(double range_m, double carrier_hz, double rcs_m2,
                         double g_tx = 1.0, double g_rx = 1.0) {
    if (range_m <= 0.0) throw DegenerateGeometryError("radar_gain: zero range");
    if (rcs_m2 <= 0.0) throw std::invalid_argument("radar_gain: rcs must be positive");
    double lambda = kSpeedOfLight / carrier_hz;
    double d2 = range_m * range_m;
    return lambda * lambda * rcs_m2 * g_rx * g_tx /
           (64.0 * kPi * kPi * kPi * d2 * d2);
}

// ---------------------------------------------------------------------------
// Path bookkeeping
// ---------------------------------------------------------------------------

struct SplitPaths {
    std::vector<PathParams> direct;   // LoS or object paths
    std::vector<PathParams> diffuse;  // NLoS or clutter paths
};

/// Partitions paths by tag. LoS and Object count as the geometry-bearing
/// part; NLoS and Clutter as the disturbance part. The two parts sum back
/// to the full channel exactly (the synthesis is linear in paths).
inline SplitPaths split_channel(const std::vector<PathParams>& paths) {
    SplitPaths out;
    for (const auto& p : paths) {
        if (p.tag == PathTag::LoS || p.tag == PathTag::Object)
            out.direct.push_back(p);
        else
            out.diffuse.push_back(p);
    }
    return out;
}

/// Draws `count` clutter paths with delays uniform in [0, 1/delta_f) (the
/// grid's unambiguous range), uniform angles, and i.i.d. complex Gaussian
/// gains scaled so the expected total clutter power equals power_budget.
inline std::vector<PathParams> make_clutter(std::uint64_t seed, int count,
                                            double power_budget, const GridConfig& grid) {
    if (count < 0) throw std::invalid_argument("clutter count must be >= 0");
    std::vector<PathParams> out;
    if (count == 0) return out;
    std::mt19937_64 rng(mix_seed(seed));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, std::sqrt(power_budget / (2.0 * count)));
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        PathParams p;
        p.tag = PathTag::Clutter;
        p.gain = cplx(gauss(rng), gauss(rng));
        p.geo.delay = unif(rng) / grid.subcarrier_spacing;
        p.geo.doppler = 0.0;
        p.geo.aoa = Vec2(wrap_angle(2.0 * kPi * unif(rng)), std::asin(2.0 * unif(rng) - 1.0));
        p.geo.aod = Vec2(wrap_angle(2.0 * kPi * unif(rng)), std::asin(2.0 * unif(rng) - 1.0));
        out.push_back(p);
    }
    return out;
}

}  // namespace locsense
