// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "locsense/bounds.hpp"
#include "locsense/channel.hpp"
#include "locsense/core.hpp"
#include "locsense/resolution.hpp"
#include "locsense/signal.hpp"

namespace locsense {

// ---------------------------------------------------------------------------
// Unstructured LS channel estimate
// ---------------------------------------------------------------------------

/// Per-(subcarrier, symbol-group) LS estimate of the MIMO channel.
///
/// Symbols are processed in groups of txrx.group_size; the channel is
/// treated as constant within a group, which makes the stacked precoder /
/// combiner system invertible when the schedule sounds all Tx directions.
/// The Doppler axis therefore runs over groups with an effective sampling
/// step of group_size * Ts.
struct ChannelEstimate {
    std::vector<CMatX> h_hat;  // indexed g * N + n, each N_rx x N_tx
    int n_subcarriers = 0;
    int n_groups = 0;
    int n_rx = 0;
    int n_tx = 0;
    double group_duration = 0.0;  // [s]
    GridConfig grid;
    double noise_var = 0.0;  // per-entry variance of h_hat (propagated)

    const CMatX& at(int n, int g) const { return h_hat[std::size_t(g) * n_subcarriers + n]; }
    CMatX& at(int n, int g) { return h_hat[std::size_t(g) * n_subcarriers + n]; }
    Eigen::Index vec_size() const {
        return Eigen::Index(n_subcarriers) * n_groups * n_rx * n_tx;
    }
};

/// Inverts the known precoder/combiner action per (n, group). In SISO with
/// unit pilots this reduces to h_hat = y / f. Throws when the sounding
/// schedule leaves the channel unidentifiable, naming the deficient cell.
inline ChannelEstimate ls_channel_estimate(const Observation& obs, const GridConfig& grid,
                                           const TxRxConfig& txrx) {
    const int g_size = txrx.group_size;
    if (grid.n_symbols % g_size != 0)
        throw std::invalid_argument("n_symbols must be a multiple of the sounding group size");
    ChannelEstimate est;
    est.n_subcarriers = grid.n_subcarriers;
    est.n_groups = grid.n_symbols / g_size;
    est.n_rx = txrx.n_rx();
    est.n_tx = txrx.n_tx();
    est.group_duration = g_size * grid.symbol_duration;
    est.grid = grid;
    est.h_hat.resize(std::size_t(est.n_subcarriers) * est.n_groups);

    const int n_unknowns = est.n_rx * est.n_tx;
    double var_accum = 0.0;
    for (int g = 0; g < est.n_groups; ++g) {
        for (int n = 0; n < grid.n_subcarriers; ++n) {
            // Stack y_{n,k} = (f^T kron W^H) vec(H) over the group.
            const int m_rows = g_size * txrx.m_rx();
            CMatX a(m_rows, n_unknowns);
            CVecX rhs(m_rows);
            for (int j = 0; j < g_size; ++j) {
                int k = g * g_size + j;
                const CMatX wh = txrx.combiners[k].adjoint();
                const CVecX& f = txrx.precoder(n, k, grid.n_subcarriers);
                for (int t = 0; t < est.n_tx; ++t)
                    a.block(j * txrx.m_rx(), t * est.n_rx, txrx.m_rx(), est.n_rx) =
                        f(t) * wh;
                rhs.segment(j * txrx.m_rx(), txrx.m_rx()) = obs.at(n, k);
            }
            Eigen::CompleteOrthogonalDecomposition<CMatX> cod(a);
            if (cod.rank() < n_unknowns)
                throw std::runtime_error(
                    "ls_channel_estimate: rank-deficient pilot pattern at subcarrier " +
                    std::to_string(n) + ", symbol group " + std::to_string(g));
            CVecX vec_h = cod.solve(rhs);
            CMatX h(est.n_rx, est.n_tx);
            for (int t = 0; t < est.n_tx; ++t) h.col(t) = vec_h.segment(t * est.n_rx, est.n_rx);
            est.at(n, g) = std::move(h);
            if (g == 0) {
                // Per-entry noise propagation: avg diag of (A^H A)^-1.
                CMatX gram_inv = (a.adjoint() * a).inverse();
                var_accum += gram_inv.real().trace() / n_unknowns;
            }
        }
    }
    est.noise_var = txrx.noise_psd * var_accum / grid.n_subcarriers;
    return est;
}

// ---------------------------------------------------------------------------
// Vectorization (delay x doppler x rx x tx Kronecker order)
// ---------------------------------------------------------------------------

/// Stacks the estimate into h with index
///   ((n * K' + g) * N_rx + r) * N_tx + t,
/// i.e. the Kronecker order a_delay x a_doppler x a_rx x a_tx. Invertible;
/// devectorize() is the exact inverse.
inline CVecX vectorize(const ChannelEstimate& est) {
    CVecX h(est.vec_size());
    Eigen::Index at = 0;
    for (int n = 0; n < est.n_subcarriers; ++n)
        for (int g = 0; g < est.n_groups; ++g)
            for (int r = 0; r < est.n_rx; ++r)
                for (int t = 0; t < est.n_tx; ++t) h(at++) = est.at(n, g)(r, t);
    return h;
}

inline ChannelEstimate devectorize(const CVecX& h, const ChannelEstimate& like) {
    if (h.size() != like.vec_size())
        throw std::invalid_argument("devectorize: size mismatch");
    ChannelEstimate est = like;
    Eigen::Index at = 0;
    for (int n = 0; n < est.n_subcarriers; ++n)
        for (int g = 0; g < est.n_groups; ++g)
            for (int r = 0; r < est.n_rx; ++r)
                for (int t = 0; t < est.n_tx; ++t) est.at(n, g)(r, t) = h(at++);
    return est;
}

// ---------------------------------------------------------------------------
// Sparse dictionary
// ---------------------------------------------------------------------------

/// Estimated path with gain, geometry, and per-path uncertainty.
struct DetectedPath {
    GeoParams eta;     // SI units
    cplx alpha{0.0, 0.0};
    MatX covariance;   // over active domains, geo_param_names() order, SI units
    DomainFlags flags;
    bool refined = false;
    bool converged = true;
};

/// Kronecker dictionary over the active domains. Atom columns are
/// unit-norm; the unnormalized atom has norm sqrt(len), which converts OMP
/// coefficients back to physical path gains.
class Dictionary {
public:
    /// Grids may be empty to deactivate a domain (delay must be active or
    /// the dictionary would be empty for single-antenna grids). Grid steps
    /// are validated against half the corresponding resolution limit.
    Dictionary(const ChannelEstimate& like, VecX delay_grid_s, VecX doppler_grid_hz,
               VecX aoa_az_grid_rad, VecX aod_az_grid_rad,
               ArrayGeometry rx_array = ArrayGeometry::single(),
               ArrayGeometry tx_array = ArrayGeometry::single())
        : delay_grid_(std::move(delay_grid_s)),
          doppler_grid_(std::move(doppler_grid_hz)),
          aoa_grid_(std::move(aoa_az_grid_rad)),
          aod_grid_(std::move(aod_az_grid_rad)),
          rx_array_(std::move(rx_array)),
          tx_array_(std::move(tx_array)),
          n_sub_(like.n_subcarriers),
          n_groups_(like.n_groups),
          n_rx_(like.n_rx),
          n_tx_(like.n_tx),
          subcarrier_spacing_(like.grid.subcarrier_spacing),
          group_duration_(like.group_duration) {
        ResolutionReport res = resolution_limits(like.grid, rx_array_);
        check_step(delay_grid_, res.delay_res_s / 2.0, "delay");
        if (n_groups_ > 1)
            check_step(doppler_grid_, 0.5 / (n_groups_ * group_duration_), "doppler");
        check_step(aoa_grid_, res.angular_res_az_rad / 2.0, "aoa");
        build();
    }

    const CMatX& atoms() const { return atoms_; }
    Eigen::Index n_atoms() const { return atoms_.cols(); }
    Eigen::Index atom_len() const { return atoms_.rows(); }
    double gain_scale() const { return std::sqrt(double(atom_len())); }

    DomainFlags flags() const {
        DomainFlags f;
        f.delay = delay_grid_.size() > 0;
        f.doppler = doppler_grid_.size() > 0;
        f.aoa_az = aoa_grid_.size() > 0;
        f.aod_az = aod_grid_.size() > 0;
        return f;
    }

    /// Geometry of a dictionary column.
    GeoParams eta_of(Eigen::Index col) const {
        const auto& ix = index_map_[std::size_t(col)];
        GeoParams g;
        if (delay_grid_.size() > 0) g.delay = delay_grid_(ix[0]);
        if (doppler_grid_.size() > 0) g.doppler = doppler_grid_(ix[1]);
        if (aoa_grid_.size() > 0) g.aoa(0) = aoa_grid_(ix[2]);
        if (aod_grid_.size() > 0) g.aod(0) = aod_grid_(ix[3]);
        return g;
    }

    /// Unnormalized atom for arbitrary (off-grid) geometry.
    CVecX atom(const GeoParams& eta) const {
        CVecX a_d(n_sub_), a_dop(n_groups_);
        for (int n = 0; n < n_sub_; ++n)
            a_d(n) = std::exp(-kImag * 2.0 * kPi * double(n) * subcarrier_spacing_ *
                              eta.delay);
        for (int g = 0; g < n_groups_; ++g)
            a_dop(g) = std::exp(kImag * 2.0 * kPi * double(g) * group_duration_ *
                                eta.doppler);
        CVecX a_rx = steering_vector(rx_array_, eta.aoa);
        CVecX a_tx = steering_vector(tx_array_, eta.aod);
        CVecX out(atom_len());
        Eigen::Index at = 0;
        for (int n = 0; n < n_sub_; ++n)
            for (int g = 0; g < n_groups_; ++g)
                for (int r = 0; r < n_rx_; ++r)
                    for (int t = 0; t < n_tx_; ++t)
                        out(at++) = a_d(n) * a_dop(g) * a_rx(r) * a_tx(t);
        return out;
    }

    /// d atom / d (active param), parameters in FIM units (delay in m).
    CVecX atom_derivative(const GeoParams& eta, int geo_component) const {
        CVecX base = atom(eta);
        Eigen::Index at = 0;
        switch (geo_component) {
            case 0: {  // aoa_az
                CVecX a_rx = steering_vector(rx_array_, eta.aoa);
                CVecX d_rx = steering_derivative(rx_array_, eta.aoa, true);
                for (int n = 0; n < n_sub_; ++n)
                    for (int g = 0; g < n_groups_; ++g)
                        for (int r = 0; r < n_rx_; ++r)
                            for (int t = 0; t < n_tx_; ++t, ++at)
                                base(at) *= d_rx(r) / a_rx(r);
                return base;
            }
            case 2: {  // aod_az
                CVecX a_tx = steering_vector(tx_array_, eta.aod);
                CVecX d_tx = steering_derivative(tx_array_, eta.aod, true);
                for (int n = 0; n < n_sub_; ++n)
                    for (int g = 0; g < n_groups_; ++g)
                        for (int r = 0; r < n_rx_; ++r)
                            for (int t = 0; t < n_tx_; ++t, ++at)
                                base(at) *= d_tx(t) / a_tx(t);
                return base;
            }
            case 4: {  // delay [m]
                for (int n = 0; n < n_sub_; ++n) {
                    cplx fac = -kImag * 2.0 * kPi * double(n) * subcarrier_spacing_ /
                               kSpeedOfLight;
                    for (int g = 0; g < n_groups_; ++g)
                        for (int r = 0; r < n_rx_; ++r)
                            for (int t = 0; t < n_tx_; ++t, ++at) base(at) *= fac;
                }
                return base;
            }
            case 5: {  // doppler [Hz]
                for (int n = 0; n < n_sub_; ++n)
                    for (int g = 0; g < n_groups_; ++g) {
                        cplx fac = kImag * 2.0 * kPi * double(g) * group_duration_;
                        for (int r = 0; r < n_rx_; ++r)
                            for (int t = 0; t < n_tx_; ++t, ++at) base(at) *= fac;
                    }
                return base;
            }
            default:
                throw std::invalid_argument("unsupported atom derivative component");
        }
    }

    const ArrayGeometry& rx_array() const { return rx_array_; }
    const ArrayGeometry& tx_array() const { return tx_array_; }
    double subcarrier_spacing() const { return subcarrier_spacing_; }
    double group_duration() const { return group_duration_; }
    int n_subcarriers() const { return n_sub_; }
    int n_groups() const { return n_groups_; }

    /// Oversampled uniform grids: step = resolution / oversampling per
    /// active domain, covering the unambiguous range.
    static Dictionary regular(const ChannelEstimate& like, double oversampling,
                              bool with_doppler = false,
                              ArrayGeometry rx_array = ArrayGeometry::single(),
                              ArrayGeometry tx_array = ArrayGeometry::single(),
                              bool with_aoa = false, bool with_aod = false) {
        if (oversampling < 2.0)
            throw std::invalid_argument("dictionary oversampling must be >= 2");
        double w = like.n_subcarriers * like.grid.subcarrier_spacing;
        double delay_step = 1.0 / (w * oversampling);
        int m_delay = int(std::floor(1.0 / like.grid.subcarrier_spacing / delay_step));
        VecX delay_grid(m_delay);
        for (int i = 0; i < m_delay; ++i) delay_grid(i) = i * delay_step;

        VecX doppler_grid;
        if (with_doppler && like.n_groups > 1) {
            double span = 1.0 / like.group_duration;
            double step = span / (like.n_groups * oversampling);
            int m = int(std::floor(span / step));
            doppler_grid.resize(m);
            for (int i = 0; i < m; ++i) doppler_grid(i) = -span / 2.0 + i * step;
        }
        auto angle_grid = [&](const ArrayGeometry& arr, bool enabled) {
            VecX g;
            if (!enabled || arr.size() <= 1) return g;
            double res = 2.0 / double(arr.size());
            double step = res / oversampling;
            int m = int(std::floor(kPi / step));
            g.resize(m);
            for (int i = 0; i < m; ++i) g(i) = -kPi / 2.0 + (i + 0.5) * step;
            return g;
        };
        return Dictionary(like, delay_grid, doppler_grid, angle_grid(rx_array, with_aoa),
                          angle_grid(tx_array, with_aod), rx_array, tx_array);
    }

private:
    static void check_step(const VecX& grid, double max_step, const char* what) {
        if (grid.size() < 2) return;
        double step = grid(1) - grid(0);
        if (step > max_step * (1.0 + 1e-9))
            throw std::invalid_argument(std::string("dictionary ") + what +
                                        " grid is undersampled");
    }

    void build() {
        int md = std::max<int>(1, int(delay_grid_.size()));
        int mv = std::max<int>(1, int(doppler_grid_.size()));
        int ma = std::max<int>(1, int(aoa_grid_.size()));
        int mb = std::max<int>(1, int(aod_grid_.size()));
        Eigen::Index len = Eigen::Index(n_sub_) * n_groups_ * n_rx_ * n_tx_;
        atoms_.resize(len, Eigen::Index(md) * mv * ma * mb);
        index_map_.reserve(std::size_t(atoms_.cols()));
        Eigen::Index col = 0;
        for (int id = 0; id < md; ++id)
            for (int iv = 0; iv < mv; ++iv)
                for (int ia = 0; ia < ma; ++ia)
                    for (int ib = 0; ib < mb; ++ib) {
                        index_map_.push_back({id, iv, ia, ib});
                        atoms_.col(col) = atom(eta_of(col));
                        atoms_.col(col) /= atoms_.col(col).norm();
                        ++col;
                    }
    }

    VecX delay_grid_, doppler_grid_, aoa_grid_, aod_grid_;
    ArrayGeometry rx_array_, tx_array_;
    int n_sub_, n_groups_, n_rx_, n_tx_;
    double subcarrier_spacing_, group_duration_;
    CMatX atoms_;
    std::vector<std::array<int, 4>> index_map_;
};

// ---------------------------------------------------------------------------
// Orthogonal matching pursuit
// ---------------------------------------------------------------------------

/// Stopping rule for the greedy selection.
///
/// PeakTest (default) stops when the strongest remaining correlation is
/// statistically consistent with noise: max |<a, r>|^2 < sigma^2 ln(M/pfa).
/// NoiseFloor stops when the residual energy falls below
/// (1 + gamma) * sigma^2 * len; adequate when per-path energy dominates the
/// noise floor (small grids), but it undercounts weak paths on large grids.
struct OmpStopRule {
    enum class Kind { PeakTest, NoiseFloor };
    Kind kind = Kind::PeakTest;
    double pfa = 1e-3;
    double gamma = 0.5;
    int max_paths = 10;
};

/// Greedy atom selection with full LS re-projection per iteration.
/// Ties in the correlation scan break toward the lowest grid index. An
/// empty result means nothing rose above the detection rule.
inline std::vector<DetectedPath> omp(const CVecX& h, const Dictionary& dict,
                                     double noise_var, const OmpStopRule& rule = {}) {
    const Eigen::Index len = dict.atom_len();
    if (h.size() != len) throw std::invalid_argument("omp: size mismatch");
    const double peak_threshold =
        noise_var * std::log(double(dict.n_atoms()) / rule.pfa);
    const double floor_threshold = (1.0 + rule.gamma) * noise_var * double(len);

    std::vector<Eigen::Index> selected;
    CVecX residual = h;
    CVecX coef;
    for (int it = 0; it < rule.max_paths; ++it) {
        if (rule.kind == OmpStopRule::Kind::NoiseFloor &&
            residual.squaredNorm() < floor_threshold)
            break;
        VecX corr = (dict.atoms().adjoint() * residual).cwiseAbs2();
        Eigen::Index best = 0;
        double best_val = corr(0);
        for (Eigen::Index i = 1; i < corr.size(); ++i)
            if (corr(i) > best_val) {
                best_val = corr(i);
                best = i;
            }
        if (rule.kind == OmpStopRule::Kind::PeakTest && best_val < peak_threshold) break;
        if (std::find(selected.begin(), selected.end(), best) != selected.end()) break;
        selected.push_back(best);

        CMatX sub(len, selected.size());
        for (std::size_t s = 0; s < selected.size(); ++s)
            sub.col(s) = dict.atoms().col(selected[s]);
        coef = sub.colPivHouseholderQr().solve(h);
        residual = h - sub * coef;
    }

    std::vector<DetectedPath> out;
    out.reserve(selected.size());
    for (std::size_t s = 0; s < selected.size(); ++s) {
        DetectedPath p;
        p.eta = dict.eta_of(selected[s]);
        p.alpha = coef(Eigen::Index(s)) / dict.gain_scale();
        p.flags = dict.flags();
        out.push_back(std::move(p));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Spatial frequencies (harmonic-retrieval view)
// ---------------------------------------------------------------------------

/// Per-dimension spatial frequencies of one path, in the tensor order
/// (subcarrier, symbol group, rx element, tx element):
///   subcarrier:  -2 pi delta_f tau
///   symbol:      +2 pi Ts' nu
///   rx/tx:       +2 pi spacing sin(az) cos(el)  (uniform linear arrays)
struct SpatialFrequencies {
    std::vector<std::string> dims;
    std::vector<double> omega;
};

namespace detail {

/// Spacing (in wavelengths) of a uniform linear array along the y axis.
inline double ula_spacing(const ArrayGeometry& arr) {
    if (arr.size() < 2) throw std::invalid_argument("array has a single element");
    const auto& p = arr.element_positions_wl;
    double step = p(1, 1) - p(1, 0);
    for (Eigen::Index m = 0; m < arr.size(); ++m) {
        if (std::abs(p(0, m)) > 1e-12 || std::abs(p(2, m)) > 1e-12 ||
            std::abs(p(1, m) - double(m) * step) > 1e-9)
            throw std::invalid_argument(
                "spatial frequencies require a uniform linear array along y");
    }
    return step;
}

}  // namespace detail

inline SpatialFrequencies spatial_frequencies(const GeoParams& eta, const GridConfig& grid,
                                              double group_duration,
                                              const ArrayGeometry& rx_array,
                                              const ArrayGeometry& tx_array,
                                              const DomainFlags& flags) {
    SpatialFrequencies out;
    if (flags.delay) {
        out.dims.push_back("subcarrier");
        out.omega.push_back(-2.0 * kPi * grid.subcarrier_spacing * eta.delay);
    }
    if (flags.doppler) {
        out.dims.push_back("symbol");
        out.omega.push_back(2.0 * kPi * group_duration * eta.doppler);
    }
    if (flags.aoa_az) {
        double s = detail::ula_spacing(rx_array);
        out.dims.push_back("rx");
        out.omega.push_back(2.0 * kPi * s * std::sin(eta.aoa(0)) * std::cos(eta.aoa(1)));
    }
    if (flags.aod_az) {
        double s = detail::ula_spacing(tx_array);
        out.dims.push_back("tx");
        out.omega.push_back(2.0 * kPi * s * std::sin(eta.aod(0)) * std::cos(eta.aod(1)));
    }
    return out;
}

/// Inverse of spatial_frequencies for in-range values (delay in
/// [0, 1/delta_f), |doppler| < 1/(2 Ts'), azimuth in (-pi/2, pi/2) with
/// zero elevation).
inline GeoParams physical_from_spatial(const SpatialFrequencies& sf, const GridConfig& grid,
                                       double group_duration,
                                       const ArrayGeometry& rx_array,
                                       const ArrayGeometry& tx_array) {
    GeoParams eta;
    for (std::size_t i = 0; i < sf.dims.size(); ++i) {
        double w = sf.omega[i];
        if (sf.dims[i] == "subcarrier") {
            double tau = -w / (2.0 * kPi * grid.subcarrier_spacing);
            if (tau < 0.0) tau += 1.0 / grid.subcarrier_spacing;
            eta.delay = tau;
        } else if (sf.dims[i] == "symbol") {
            eta.doppler = w / (2.0 * kPi * group_duration);
        } else if (sf.dims[i] == "rx") {
            double s = detail::ula_spacing(rx_array);
            eta.aoa(0) = std::asin(std::clamp(w / (2.0 * kPi * s), -1.0, 1.0));
        } else if (sf.dims[i] == "tx") {
            double s = detail::ula_spacing(tx_array);
            eta.aod(0) = std::asin(std::clamp(w / (2.0 * kPi * s), -1.0, 1.0));
        }
    }
    return eta;
}

// ---------------------------------------------------------------------------
// Periodogram baseline
// ---------------------------------------------------------------------------

struct PeriodogramPeak {
    GeoParams eta;
    double power = 0.0;
};

struct PeriodogramResult {
    VecX delay_grid_s;      // empty when the dim was not requested
    VecX doppler_grid_hz;
    VecX spectrum;          // power, delay-major then doppler
    std::vector<PeriodogramPeak> peaks;  // sorted by power, descending
};

/// Zero-padded DFT magnitude over the delay and/or Doppler dims, with
/// power summed incoherently over the spatial dims. Local maxima above
/// `threshold` (absolute power; 0 keeps all) are returned as coarse peaks.
inline PeriodogramResult periodogram(const ChannelEstimate& est, bool over_delay,
                                     bool over_doppler, int zero_pad = 4,
                                     double threshold = 0.0) {
    const int md = over_delay ? est.n_subcarriers * zero_pad : 1;
    const int mv = over_doppler && est.n_groups > 1 ? est.n_groups * zero_pad : 1;
    PeriodogramResult out;
    if (over_delay) {
        out.delay_grid_s.resize(md);
        for (int i = 0; i < md; ++i)
            out.delay_grid_s(i) = double(i) / (double(md) * est.grid.subcarrier_spacing);
    }
    if (mv > 1) {
        double span = 1.0 / est.group_duration;
        out.doppler_grid_hz.resize(mv);
        for (int i = 0; i < mv; ++i) out.doppler_grid_hz(i) = double(i) * span / double(mv);
    }

    out.spectrum = VecX::Zero(Eigen::Index(md) * mv);
    for (int r = 0; r < est.n_rx; ++r)
        for (int t = 0; t < est.n_tx; ++t) {
            CMatX slice(est.n_subcarriers, est.n_groups);
            for (int n = 0; n < est.n_subcarriers; ++n)
                for (int g = 0; g < est.n_groups; ++g) slice(n, g) = est.at(n, g)(r, t);
            // matched filter along delay: sum_n h_n exp(+j 2 pi n df tau)
            CMatX stage1(md, est.n_groups);
            if (over_delay) {
                for (int i = 0; i < md; ++i) {
                    double tau = out.delay_grid_s(i);
                    CVecX w(est.n_subcarriers);
                    for (int n = 0; n < est.n_subcarriers; ++n)
                        w(n) = std::exp(kImag * 2.0 * kPi * double(n) *
                                        est.grid.subcarrier_spacing * tau);
                    stage1.row(i) = (w.transpose() * slice);
                }
            } else {
                stage1 = slice.colwise().sum();
            }
            for (int i = 0; i < md; ++i) {
                if (mv > 1) {
                    for (int p = 0; p < mv; ++p) {
                        double nu = out.doppler_grid_hz(p);
                        cplx acc(0.0, 0.0);
                        for (int g = 0; g < est.n_groups; ++g)
                            acc += stage1(i, g) *
                                   std::exp(-kImag * 2.0 * kPi * double(g) *
                                            est.group_duration * nu);
                        out.spectrum(Eigen::Index(i) * mv + p) += std::norm(acc);
                    }
                } else {
                    cplx acc = stage1.row(i).sum();
                    out.spectrum(i) += std::norm(acc);
                }
            }
        }

    // Local maxima (circular in both dims), above threshold.
    auto val = [&](int i, int p) {
        return out.spectrum(Eigen::Index((i + md) % md) * mv + (p + mv) % mv);
    };
    for (int i = 0; i < md; ++i)
        for (int p = 0; p < mv; ++p) {
            double v = val(i, p);
            if (v < threshold) continue;
            bool is_max = true;
            if (md > 1) is_max = is_max && v >= val(i - 1, p) && v > val(i + 1, p);
            if (mv > 1) is_max = is_max && v >= val(i, p - 1) && v > val(i, p + 1);
            if (!is_max || (md == 1 && mv == 1)) continue;
            PeriodogramPeak peak;
            peak.power = v;
            if (over_delay) peak.eta.delay = out.delay_grid_s(i);
            if (mv > 1) {
                double nu = out.doppler_grid_hz(p);
                double span = 1.0 / est.group_duration;
                peak.eta.doppler = nu >= span / 2.0 ? nu - span : nu;
            }
            out.peaks.push_back(std::move(peak));
        }
    std::sort(out.peaks.begin(), out.peaks.end(),
              [](const auto& a, const auto& b) { return a.power > b.power; });
    return out;
}

// ---------------------------------------------------------------------------
// Maximum-likelihood refinement
// ---------------------------------------------------------------------------

struct RefineOptions {
    int max_iterations = 50;
    double grad_tol_rel = 1e-9;
    int max_backtracks = 20;
    // Components whose fitted energy |alpha|^2 * len falls below the
    // noise-level significance threshold (same test as the OMP peak rule)
    // are dropped and the remainder re-refined. Off-grid paths at high SNR
    // otherwise leave leakage atoms in the greedy selection.
    bool prune_insignificant = true;
    double prune_pfa = 1e-3;
    int max_prune_rounds = 3;
};

namespace detail {

/// Active geo components of a path in geo_param_names() order, FIM units.
inline std::vector<int> active_components(const DomainFlags& f) {
    std::vector<int> idx;
    for (int i = 0; i < 6; ++i)
        if (f.get(i)) idx.push_back(i);
    return idx;
}

inline double geo_get(const GeoParams& g, int comp) {
    switch (comp) {
        case 0: return g.aoa(0);
        case 1: return g.aoa(1);
        case 2: return g.aod(0);
        case 3: return g.aod(1);
        case 4: return g.delay * kSpeedOfLight;
        default: return g.doppler;
    }
}

inline void geo_set(GeoParams& g, int comp, double v) {
    switch (comp) {
        case 0: g.aoa(0) = v; break;
        case 1: g.aoa(1) = v; break;
        case 2: g.aod(0) = v; break;
        case 3: g.aod(1) = v; break;
        case 4: g.delay = v / kSpeedOfLight; break;
        default: g.doppler = v; break;
    }
}

}  // namespace detail

namespace detail {

/// One refinement pass without pruning; see ml_refine.
inline std::vector<DetectedPath> refine_pass(const CVecX& h, const Dictionary& dict,
                                             const std::vector<DetectedPath>& initial,
                                             double noise_var, const RefineOptions& opt) {
    const Eigen::Index len = dict.atom_len();
    const int n_paths = int(initial.size());
    const auto comps = detail::active_components(initial.front().flags);
    const int n_geo = int(comps.size());

    // Pack geometry parameters (FIM units).
    VecX theta(n_paths * n_geo);
    for (int l = 0; l < n_paths; ++l)
        for (int c = 0; c < n_geo; ++c)
            theta(l * n_geo + c) = detail::geo_get(initial[l].eta, comps[c]);

    auto unpack = [&](const VecX& th) {
        std::vector<GeoParams> etas(n_paths);
        for (int l = 0; l < n_paths; ++l) {
            etas[l] = initial[l].eta;
            for (int c = 0; c < n_geo; ++c)
                detail::geo_set(etas[l], comps[c], th(l * n_geo + c));
        }
        return etas;
    };

    auto solve_gains = [&](const std::vector<GeoParams>& etas, CMatX& a_out) {
        a_out.resize(len, n_paths);
        for (int l = 0; l < n_paths; ++l) a_out.col(l) = dict.atom(etas[l]);
        return a_out.colPivHouseholderQr().solve(h).eval();
    };

    CMatX a;
    auto etas = unpack(theta);
    CVecX gains = solve_gains(etas, a);
    CVecX residual = h - a * gains;
    double cost = residual.squaredNorm();
    const double cost_init = cost;
    bool converged = false;

    for (int it = 0; it < opt.max_iterations; ++it) {
        // Jacobian of the mean wrt geometry at current gains.
        CMatX jc(len, n_paths * n_geo);
        for (int l = 0; l < n_paths; ++l)
            for (int c = 0; c < n_geo; ++c)
                jc.col(l * n_geo + c) = gains(l) * dict.atom_derivative(etas[l], comps[c]);

        VecX grad = 2.0 * (jc.adjoint() * residual).real();
        double j_norm = jc.norm();
        if (grad.norm() <=
            opt.grad_tol_rel * std::max(1.0, 2.0 * j_norm * residual.norm())) {
            converged = true;
            break;
        }

        // Real-stacked GN step.
        MatX jr(2 * len, n_paths * n_geo);
        jr.topRows(len) = jc.real();
        jr.bottomRows(len) = jc.imag();
        VecX rr(2 * len);
        rr.head(len) = residual.real();
        rr.tail(len) = residual.imag();
        VecX step = jr.colPivHouseholderQr().solve(rr);
        if (!step.allFinite()) break;

        double t = 1.0;
        bool accepted = false;
        for (int bt = 0; bt < opt.max_backtracks; ++bt) {
            VecX theta_try = theta + t * step;
            auto etas_try = unpack(theta_try);
            CMatX a_try;
            CVecX gains_try = solve_gains(etas_try, a_try);
            CVecX res_try = h - a_try * gains_try;
            double cost_try = res_try.squaredNorm();
            if (cost_try < cost) {
                theta = std::move(theta_try);
                etas = std::move(etas_try);
                a = std::move(a_try);
                gains = std::move(gains_try);
                residual = std::move(res_try);
                cost = cost_try;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) {
            converged = true;  // no descent direction left at this scale
            break;
        }
    }
    (void)cost_init;

    // Per-path uncertainty from the joint FIM at the optimum.
    CMatX d(len, n_paths * (n_geo + 2));
    for (int l = 0; l < n_paths; ++l) {
        for (int c = 0; c < n_geo; ++c)
            d.col(l * n_geo + c) = gains(l) * dict.atom_derivative(etas[l], comps[c]);
        CVecX unit = dict.atom(etas[l]);
        d.col(n_paths * n_geo + 2 * l) = unit;
        d.col(n_paths * n_geo + 2 * l + 1) = kImag * unit;
    }
    MatX fim = (2.0 / noise_var) * (d.adjoint() * d).real();
    fim = 0.5 * (fim + fim.transpose().eval());
    auto inv = detail::invert_quad(fim);

    std::vector<DetectedPath> out(initial.size());
    for (int l = 0; l < n_paths; ++l) {
        DetectedPath p;
        p.eta = etas[l];
        p.alpha = gains(l);
        p.flags = initial[l].flags;
        p.refined = true;
        p.converged = converged;
        if (inv) {
            MatX cov = inv->block(l * n_geo, l * n_geo, n_geo, n_geo);
            // FIM units -> SI: delay rows/cols back to seconds.
            for (int c = 0; c < n_geo; ++c)
                if (comps[c] == 4) {
                    cov.row(c) /= kSpeedOfLight;
                    cov.col(c) /= kSpeedOfLight;
                }
            p.covariance = 0.5 * (cov + cov.transpose().eval());
        }
        out[std::size_t(l)] = std::move(p);
    }
    std::sort(out.begin(), out.end(),
              [](const DetectedPath& x, const DetectedPath& y) {
                  return x.eta.delay < y.eta.delay;
              });
    return out;
}

}  // namespace detail

/// Joint local maximization of the log-likelihood over all paths' active
/// geometry and gains: damped Gauss-Newton on the geometry with gains
/// profiled by LS each step, accepting only cost-decreasing steps, so the
/// returned likelihood never falls below the initialization. Per-path
/// covariance comes from the inverse joint Fisher information at the
/// optimum (gains as nuisance). Insignificant components are pruned and
/// the remainder re-refined (see RefineOptions).
inline std::vector<DetectedPath> ml_refine(const CVecX& h, const Dictionary& dict,
                                           std::vector<DetectedPath> initial,
                                           double noise_var,
                                           const RefineOptions& opt = {}) {
    if (initial.empty()) return initial;
    std::vector<DetectedPath> current =
        detail::refine_pass(h, dict, initial, noise_var, opt);
    if (!opt.prune_insignificant || noise_var <= 0.0) return current;
    const double threshold =
        noise_var * std::log(double(dict.n_atoms()) / opt.prune_pfa);
    for (int round = 0; round < opt.max_prune_rounds; ++round) {
        std::vector<DetectedPath> kept;
        for (const auto& d : current) {
            double energy = std::norm(d.alpha) * double(dict.atom_len());
            if (energy >= threshold) kept.push_back(d);
        }
        if (kept.size() == current.size() || kept.empty()) break;
        current = detail::refine_pass(h, dict, kept, noise_var, opt);
    }
    return current;
}

// ---------------------------------------------------------------------------
// Detection / truth association
// ---------------------------------------------------------------------------

struct MatchGates {
    double delay_s = std::numeric_limits<double>::infinity();
    double doppler_hz = std::numeric_limits<double>::infinity();
    double angle_rad = std::numeric_limits<double>::infinity();
};

struct MatchResult {
    std::vector<std::pair<int, int>> matched;  // (truth index, detection index)
    std::vector<int> missed;                   // truth indices
    std::vector<int> false_alarms;             // detection indices
};

/// Greedy nearest-neighbor association in normalized parameter distance;
/// a pair is admissible only when every active domain falls inside its
/// gate. Unmatched truths are missed detections, unmatched detections
/// false alarms.
inline MatchResult match_detections(const std::vector<PathParams>& truth,
                                    const std::vector<DetectedPath>& detections,
                                    const MatchGates& gates) {
    struct Cand {
        double dist;
        int t, d;
    };
    std::vector<Cand> cands;
    for (int t = 0; t < int(truth.size()); ++t)
        for (int d = 0; d < int(detections.size()); ++d) {
            const auto& f = detections[std::size_t(d)].flags;
            const auto& a = truth[std::size_t(t)].geo;
            const auto& b = detections[std::size_t(d)].eta;
            double dist2 = 0.0;
            bool ok = true;
            if (f.delay) {
                double dd = std::abs(a.delay - b.delay);
                ok = ok && dd <= gates.delay_s;
                dist2 += (dd / gates.delay_s) * (dd / gates.delay_s);
            }
            if (f.doppler) {
                double dd = std::abs(a.doppler - b.doppler);
                ok = ok && dd <= gates.doppler_hz;
                dist2 += (dd / gates.doppler_hz) * (dd / gates.doppler_hz);
            }
            if (f.aoa_az) {
                double dd = std::abs(angle_diff(a.aoa(0), b.aoa(0)));
                ok = ok && dd <= gates.angle_rad;
                dist2 += (dd / gates.angle_rad) * (dd / gates.angle_rad);
            }
            if (f.aod_az) {
                double dd = std::abs(angle_diff(a.aod(0), b.aod(0)));
                ok = ok && dd <= gates.angle_rad;
                dist2 += (dd / gates.angle_rad) * (dd / gates.angle_rad);
            }
            if (ok) cands.push_back({std::sqrt(dist2), t, d});
        }
    std::sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) {
        if (x.dist != y.dist) return x.dist < y.dist;
        if (x.t != y.t) return x.t < y.t;
        return x.d < y.d;
    });

    MatchResult out;
    std::vector<bool> t_used(truth.size(), false), d_used(detections.size(), false);
    for (const auto& c : cands) {
        if (t_used[std::size_t(c.t)] || d_used[std::size_t(c.d)]) continue;
        t_used[std::size_t(c.t)] = true;
        d_used[std::size_t(c.d)] = true;
        out.matched.emplace_back(c.t, c.d);
    }
    for (int t = 0; t < int(truth.size()); ++t)
        if (!t_used[std::size_t(t)]) out.missed.push_back(t);
    for (int d = 0; d < int(detections.size()); ++d)
        if (!d_used[std::size_t(d)]) out.false_alarms.push_back(d);
    return out;
}

}  // namespace locsense
