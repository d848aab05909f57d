// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "locsense/channel.hpp"
#include "locsense/core.hpp"
#include "locsense/geometry.hpp"
#include "locsense/signal.hpp"

namespace locsense {

// ---------------------------------------------------------------------------
// Parameter bookkeeping
// ---------------------------------------------------------------------------

/// Which channel-parameter domains of a path are active (measurable /
/// estimated). Order matches geo_param_names().
struct DomainFlags {
    bool aoa_az = false;
    bool aoa_el = false;
    bool aod_az = false;
    bool aod_el = false;
    bool delay = true;
    bool doppler = false;

    int count() const {
        return int(aoa_az) + int(aoa_el) + int(aod_az) + int(aod_el) + int(delay) +
               int(doppler);
    }
    bool get(int i) const {
        switch (i) {
            case 0: return aoa_az;
            case 1: return aoa_el;
            case 2: return aod_az;
            case 3: return aod_el;
            case 4: return delay;
            default: return doppler;
        }
    }
};

// Fisher-information parameter units ("FIM units"): angles [rad],
// delay and clock bias [m] (time quantities scaled by c), Doppler [Hz],
// position [m], velocity [m/s]. The metric scaling keeps the information
// matrix well conditioned across domains; public interfaces stay in SI.

/// Labeled Fisher information matrix. The first n_interest parameters are
/// the parameters of interest, the rest nuisance.
struct FisherInfo {
    MatX matrix;
    std::vector<std::string> labels;
    int n_interest = 0;

    /// Symmetry to 1e-10 and positive semidefiniteness up to a
    /// -1e-8 * trace eigenvalue floor.
    void validate() const {
        if (matrix.rows() != matrix.cols())
            throw std::invalid_argument("FisherInfo matrix must be square");
        if (int(labels.size()) != matrix.rows())
            throw std::invalid_argument("FisherInfo labels do not match matrix size");
        if ((matrix - matrix.transpose()).cwiseAbs().maxCoeff() >
            1e-10 * std::max(1.0, matrix.cwiseAbs().maxCoeff()))
            throw std::invalid_argument("FisherInfo matrix is not symmetric");
        Eigen::SelfAdjointEigenSolver<MatX> es(matrix, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() < -1e-8 * matrix.trace())
            throw std::invalid_argument("FisherInfo matrix is not positive semidefinite");
    }
};

/// Inverse-FIM bound report for the interest block.
struct BoundReport {
    MatX covariance;      // n_interest x n_interest, Sigma(eta)
    double scalar_bound = std::numeric_limits<double>::quiet_NaN();  // sqrt(trace)
    bool identifiable = false;
    double condition_number = std::numeric_limits<double>::infinity();
};

namespace detail {

/// Gauss-Jordan inverse with partial pivoting in quad precision. The
/// near-resolution Fisher matrices reach condition numbers ~1e19, past
/// what double or long double can invert meaningfully.
inline std::optional<MatX> invert_quad(const MatX& a) {
    const int n = int(a.rows());
    std::vector<__float128> m(std::size_t(n) * 2 * n, __float128(0));
    auto at = [&](int r, int c) -> __float128& { return m[std::size_t(r) * 2 * n + c]; };
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) at(r, c) = (__float128)a(r, c);
        at(r, n + r) = 1;
    }
    for (int col = 0; col < n; ++col) {
        int piv = col;
        __float128 best = at(col, col) < 0 ? -at(col, col) : at(col, col);
        for (int r = col + 1; r < n; ++r) {
            __float128 v = at(r, col) < 0 ? -at(r, col) : at(r, col);
            if (v > best) {
                best = v;
                piv = r;
            }
        }
        if (best == 0) return std::nullopt;  // exactly singular
        if (piv != col)
            for (int c = 0; c < 2 * n; ++c) std::swap(at(piv, c), at(col, c));
        __float128 d = at(col, col);
        for (int c = 0; c < 2 * n; ++c) at(col, c) /= d;
        for (int r = 0; r < n; ++r) {
            if (r == col) continue;
            __float128 f = at(r, col);
            if (f == 0) continue;
            for (int c = 0; c < 2 * n; ++c) at(r, c) -= f * at(col, c);
        }
    }
    MatX inv(n, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) inv(r, c) = double(at(r, n + c));
    if (!inv.allFinite()) return std::nullopt;
    return inv;
}

inline double condition_number(const MatX& a) {
    Eigen::SelfAdjointEigenSolver<MatX> es(a, Eigen::EigenvaluesOnly);
    double lo = es.eigenvalues().cwiseAbs().minCoeff();
    double hi = es.eigenvalues().cwiseAbs().maxCoeff();
    if (lo <= 0.0) return std::numeric_limits<double>::infinity();
    return hi / lo;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Slepian-Bangs Fisher information
// ---------------------------------------------------------------------------

/// Noiseless-mean model kappa -> stacked complex observation mean. When no
/// analytic Jacobian is supplied, central finite differences with relative
/// step fd_rel_step (absolute floor fd_abs_floor) are used.
struct MeanModel {
    std::function<CVecX(const VecX&)> mean;
    std::function<CMatX(const VecX&)> jacobian;  // optional
    double fd_rel_step = 1e-6;
    double fd_abs_floor = 1e-9;
};

inline CMatX numeric_mean_jacobian(const MeanModel& model, const VecX& kappa) {
    CVecX mu0 = model.mean(kappa);
    CMatX d(mu0.size(), kappa.size());
    for (Eigen::Index i = 0; i < kappa.size(); ++i) {
        double step = std::max(model.fd_abs_floor, model.fd_rel_step * std::abs(kappa(i)));
        VecX kp = kappa, km = kappa;
        kp(i) += step;
        km(i) -= step;
        d.col(i) = (model.mean(kp) - model.mean(km)) / (2.0 * step);
    }
    return d;
}

/// J = (2/N0) sum Re{ (dmu/dkappa)^H dmu/dkappa }, summed over every
/// observation entry (the mean model stacks them all).
inline FisherInfo fim_slepian_bangs(const MeanModel& model, const VecX& kappa, double n0,
                                    std::vector<std::string> labels = {},
                                    int n_interest = 0) {
    CMatX d = model.jacobian ? model.jacobian(kappa) : numeric_mean_jacobian(model, kappa);
    if (!d.allFinite())
        throw std::runtime_error("fim_slepian_bangs: non-finite model derivatives");
    MatX j = (2.0 / n0) * (d.adjoint() * d).real();
    j = 0.5 * (j + j.transpose().eval());  // exact symmetry
    FisherInfo fim;
    fim.matrix = std::move(j);
    if (labels.empty())
        for (Eigen::Index i = 0; i < kappa.size(); ++i)
            labels.push_back("kappa_" + std::to_string(i));
    fim.labels = std::move(labels);
    fim.n_interest = n_interest > 0 ? n_interest : int(kappa.size());
    return fim;
}

/// Inverts the FIM and extracts the interest block. A condition number
/// above `cond_threshold` marks the problem non-identifiable; the computed
/// values are still reported when finite, but an exactly singular matrix
/// yields NaN bounds rather than a fabricated number.
inline BoundReport crb(const FisherInfo& fim, double cond_threshold = 1e12) {
    BoundReport out;
    out.condition_number = detail::condition_number(fim.matrix);
    auto inv = detail::invert_quad(fim.matrix);
    const int d = fim.n_interest;
    if (!inv) {
        out.covariance = MatX::Constant(d, d, std::numeric_limits<double>::quiet_NaN());
        return out;
    }
    out.covariance = inv->topLeftCorner(d, d);
    double tr = out.covariance.trace();
    out.scalar_bound = tr >= 0.0 ? std::sqrt(tr) : std::numeric_limits<double>::quiet_NaN();
    out.identifiable = std::isfinite(out.condition_number) &&
                       out.condition_number <= cond_threshold && tr >= 0.0;
    return out;
}

/// Chain rule to a new parameterization: the old interest block eta is a
/// function of new parameters s with Jacobian d(eta)/d(s); nuisance
/// parameters pass through unchanged. J_new = T^T J T.
inline FisherInfo transform_fim(const FisherInfo& fim, const MatX& jac_interest,
                                std::vector<std::string> new_interest_labels) {
    const int d_old = fim.n_interest;
    const int n_old = int(fim.matrix.rows());
    const int n_nuis = n_old - d_old;
    if (jac_interest.rows() != d_old)
        throw std::invalid_argument("transform_fim: jacobian rows must match interest size");
    if (int(new_interest_labels.size()) != jac_interest.cols())
        throw std::invalid_argument("transform_fim: label count must match new size");
    const int d_new = int(jac_interest.cols());
    MatX t = MatX::Zero(n_old, d_new + n_nuis);
    t.topLeftCorner(d_old, d_new) = jac_interest;
    t.bottomRightCorner(n_nuis, n_nuis).setIdentity();
    FisherInfo out;
    out.matrix = t.transpose() * fim.matrix * t;
    out.matrix = 0.5 * (out.matrix + out.matrix.transpose().eval());
    out.labels = std::move(new_interest_labels);
    for (int i = d_old; i < n_old; ++i) out.labels.push_back(fim.labels[i]);
    out.n_interest = d_new;
    return out;
}

// ---------------------------------------------------------------------------
// Structured multipath observation model (analytic derivatives)
// ---------------------------------------------------------------------------

/// Model context for the combined pilot observation of a set of paths.
///
/// gain_scales (optional, one per path) set the unit of each path's
/// (Re, Im) nuisance pair to its nominal magnitude. The interest block of
/// the inverse FIM is invariant to nuisance rescaling, so this only keeps
/// the matrix well conditioned when physical gains are tiny.
struct MultipathModelConfig {
    GridConfig grid;
    TxRxConfig txrx;
    ArrayGeometry rx_array;
    ArrayGeometry tx_array;
    std::vector<DomainFlags> flags;  // one per path
    std::vector<double> gain_scales;  // empty = unit scale

    double gain_scale(std::size_t l) const {
        return gain_scales.empty() ? 1.0 : gain_scales[l];
    }
};

/// Parameter vector layout for multipath models, in FIM units:
/// [per path: active geo params in geo_param_names() order (delay in m)],
/// then [per path: Re(gain), Im(gain)].
inline VecX multipath_kappa(const MultipathModelConfig& cfg,
                            const std::vector<PathParams>& paths) {
    std::vector<double> v;
    for (std::size_t l = 0; l < paths.size(); ++l) {
        const auto& g = paths[l].geo;
        const auto& fl = cfg.flags[l];
        if (fl.aoa_az) v.push_back(g.aoa(0));
        if (fl.aoa_el) v.push_back(g.aoa(1));
        if (fl.aod_az) v.push_back(g.aod(0));
        if (fl.aod_el) v.push_back(g.aod(1));
        if (fl.delay) v.push_back(g.delay * kSpeedOfLight);
        if (fl.doppler) v.push_back(g.doppler);
    }
    for (std::size_t l = 0; l < paths.size(); ++l) {
        double s = cfg.gain_scale(l);
        v.push_back(paths[l].gain.real() / s);
        v.push_back(paths[l].gain.imag() / s);
    }
    return Eigen::Map<VecX>(v.data(), Eigen::Index(v.size()));
}

inline std::vector<std::string> multipath_labels(const MultipathModelConfig& cfg) {
    std::vector<std::string> labels;
    for (std::size_t l = 0; l < cfg.flags.size(); ++l) {
        const auto& fl = cfg.flags[l];
        auto name = [&](const char* s) { return std::string(s) + "_" + std::to_string(l); };
        if (fl.aoa_az) labels.push_back(name("aoa_az"));
        if (fl.aoa_el) labels.push_back(name("aoa_el"));
        if (fl.aod_az) labels.push_back(name("aod_az"));
        if (fl.aod_el) labels.push_back(name("aod_el"));
        if (fl.delay) labels.push_back(name("delay_m"));
        if (fl.doppler) labels.push_back(name("doppler_hz"));
    }
    for (std::size_t l = 0; l < cfg.flags.size(); ++l) {
        labels.push_back("gain_re_" + std::to_string(l));
        labels.push_back("gain_im_" + std::to_string(l));
    }
    return labels;
}

/// Applies a kappa vector back onto a path list (inverse of
/// multipath_kappa for the active components).
inline std::vector<PathParams> multipath_apply_kappa(const MultipathModelConfig& cfg,
                                                     std::vector<PathParams> paths,
                                                     const VecX& kappa) {
    Eigen::Index i = 0;
    for (std::size_t l = 0; l < paths.size(); ++l) {
        auto& g = paths[l].geo;
        const auto& fl = cfg.flags[l];
        if (fl.aoa_az) g.aoa(0) = kappa(i++);
        if (fl.aoa_el) g.aoa(1) = kappa(i++);
        if (fl.aod_az) g.aod(0) = kappa(i++);
        if (fl.aod_el) g.aod(1) = kappa(i++);
        if (fl.delay) g.delay = kappa(i++) / kSpeedOfLight;
        if (fl.doppler) g.doppler = kappa(i++);
    }
    for (std::size_t l = 0; l < paths.size(); ++l) {
        double s = cfg.gain_scale(l);
        paths[l].gain = cplx(s * kappa(i), s * kappa(i + 1));
        i += 2;
    }
    return paths;
}

/// Mean model of the combined observation, with analytic derivatives for
/// every active domain. Requires isotropic element patterns (patterns are
/// synthesis-only elsewhere; the analytic steering derivative assumes a
/// constant element response).
inline MeanModel multipath_observation_model(const MultipathModelConfig& cfg,
                                             const std::vector<PathParams>& base_paths) {
    if (cfg.flags.size() != base_paths.size())
        throw std::invalid_argument("flags and path counts differ");
    if (cfg.rx_array.element_pattern || cfg.tx_array.element_pattern)
        throw std::invalid_argument("analytic model requires isotropic elements");

    const auto cfg_copy = cfg;
    const auto base = base_paths;

    MeanModel model;
    model.mean = [cfg_copy, base](const VecX& kappa) -> CVecX {
        auto paths = multipath_apply_kappa(cfg_copy, base, kappa);
        const auto& grid = cfg_copy.grid;
        const int m_rx = cfg_copy.txrx.m_rx();
        CVecX mu(std::size_t(grid.n_subcarriers) * grid.n_symbols * m_rx);
        Eigen::Index at = 0;
        for (int k = 0; k < grid.n_symbols; ++k)
            for (int n = 0; n < grid.n_subcarriers; ++n) {
                CMatX h = channel_matrix(paths, grid, cfg_copy.rx_array, cfg_copy.tx_array,
                                         n, k);
                mu.segment(at, m_rx) = cfg_copy.txrx.combiners[k].adjoint() * h *
                                       cfg_copy.txrx.precoder(n, k, grid.n_subcarriers);
                at += m_rx;
            }
        return mu;
    };

    model.jacobian = [cfg_copy, base](const VecX& kappa) -> CMatX {
        auto paths = multipath_apply_kappa(cfg_copy, base, kappa);
        const auto& grid = cfg_copy.grid;
        const int m_rx = cfg_copy.txrx.m_rx();
        const int L = int(paths.size());
        const Eigen::Index rows =
            Eigen::Index(grid.n_subcarriers) * grid.n_symbols * m_rx;
        CMatX d = CMatX::Zero(rows, kappa.size());

        // Column offsets of each path's geo block.
        std::vector<int> geo_at(L);
        int acc = 0;
        for (int l = 0; l < L; ++l) {
            geo_at[l] = acc;
            acc += cfg_copy.flags[l].count();
        }
        const int gain_at = acc;

        for (int l = 0; l < L; ++l) {
            const auto& p = paths[l];
            const auto& fl = cfg_copy.flags[l];
            CVecX arx = steering_vector(cfg_copy.rx_array, p.geo.aoa);
            CVecX atx = steering_vector(cfg_copy.tx_array, p.geo.aod);
            CVecX darx_az, darx_el, datx_az, datx_el;
            if (fl.aoa_az) darx_az = steering_derivative(cfg_copy.rx_array, p.geo.aoa, true);
            if (fl.aoa_el) darx_el = steering_derivative(cfg_copy.rx_array, p.geo.aoa, false);
            if (fl.aod_az) datx_az = steering_derivative(cfg_copy.tx_array, p.geo.aod, true);
            if (fl.aod_el) datx_el = steering_derivative(cfg_copy.tx_array, p.geo.aod, false);

            Eigen::Index at = 0;
            for (int k = 0; k < grid.n_symbols; ++k) {
                const CMatX wh = cfg_copy.txrx.combiners[k].adjoint();
                for (int n = 0; n < grid.n_subcarriers; ++n) {
                    const CVecX& f = cfg_copy.txrx.precoder(n, k, grid.n_subcarriers);
                    cplx g = grid_phase(grid, n, k, p.geo.delay, p.geo.doppler);
                    cplx txf = atx.transpose() * f;
                    CVecX base_vec = wh * arx;  // m_rx
                    // mean contribution of path l: alpha * g * txf * (wh arx)
                    CVecX unit = g * txf * base_vec;  // d mu / d alpha
                    int col = geo_at[l];
                    if (fl.aoa_az) {
                        d.block(at, col, m_rx, 1) += p.gain * g * txf * (wh * darx_az);
                        ++col;
                    }
                    if (fl.aoa_el) {
                        d.block(at, col, m_rx, 1) += p.gain * g * txf * (wh * darx_el);
                        ++col;
                    }
                    if (fl.aod_az) {
                        cplx dtxf = datx_az.transpose() * f;
                        d.block(at, col, m_rx, 1) += p.gain * g * dtxf * base_vec;
                        ++col;
                    }
                    if (fl.aod_el) {
                        cplx dtxf = datx_el.transpose() * f;
                        d.block(at, col, m_rx, 1) += p.gain * g * dtxf * base_vec;
                        ++col;
                    }
                    if (fl.delay) {
                        cplx fac = -kImag * 2.0 * kPi * double(n) * grid.subcarrier_spacing /
                                   kSpeedOfLight;
                        d.block(at, col, m_rx, 1) += p.gain * fac * unit;
                        ++col;
                    }
                    if (fl.doppler) {
                        cplx fac = kImag * 2.0 * kPi * double(k) * grid.symbol_duration;
                        d.block(at, col, m_rx, 1) += p.gain * fac * unit;
                        ++col;
                    }
                    double gs = cfg_copy.gain_scale(std::size_t(l));
                    d.block(at, gain_at + 2 * l, m_rx, 1) += gs * unit;
                    d.block(at, gain_at + 2 * l + 1, m_rx, 1) += gs * kImag * unit;
                    at += m_rx;
                }
            }
        }
        return d;
    };
    return model;
}

// ---------------------------------------------------------------------------
// End-to-end state-space bounds for localization
// ---------------------------------------------------------------------------

/// Ground-truth scene shared by the bound and simulation paths.
struct Scene {
    std::vector<AnchorState> anchors;
    UEState ue;
    std::vector<ObjectState> objects;
    LinkDirection link = LinkDirection::Downlink;
};

struct StateBoundOptions {
    bool estimate_bias = true;
    bool estimate_orientation = false;
    bool estimate_velocity = false;
    double gain_phase_rad = 0.0;  // phase policy for the true LoS gains
    double cond_threshold = 1e12;
};

/// Position / orientation / velocity error bounds, each the square root of
/// the trace of that quantity's block of the inverse state FIM.
struct StateBounds {
    double peb = std::numeric_limits<double>::quiet_NaN();  // [m]
    double oeb = std::numeric_limits<double>::quiet_NaN();  // [rad]
    double veb = std::numeric_limits<double>::quiet_NaN();  // [m/s]
    bool identifiable = false;
    double condition_number = std::numeric_limits<double>::infinity();
    FisherInfo state_fim;
};

/// Measurable domains implied by the hardware: azimuth needs lateral
/// (y) array extent, elevation vertical (z) extent; AoD additionally needs
/// a Tx sounding schedule; Doppler needs more than one symbol.
inline DomainFlags measurable_domains(const GridConfig& grid, const TxRxConfig& txrx,
                                      const ArrayGeometry& rx_array,
                                      const ArrayGeometry& tx_array) {
    auto extent = [](const ArrayGeometry& a, int axis) {
        return a.element_positions_wl.row(axis).maxCoeff() -
               a.element_positions_wl.row(axis).minCoeff();
    };
    DomainFlags f;
    f.delay = true;
    f.doppler = grid.n_symbols > 1 && txrx.group_size == 1;
    f.aoa_az = rx_array.size() > 1 && extent(rx_array, 1) > 0.0;
    f.aoa_el = rx_array.size() > 1 && extent(rx_array, 2) > 0.0;
    bool tx_sounded = tx_array.size() > 1 && txrx.group_size >= tx_array.size();
    f.aod_az = tx_sounded && extent(tx_array, 1) > 0.0;
    f.aod_el = tx_sounded && extent(tx_array, 2) > 0.0;
    return f;
}

/// End-to-end PEB/OEB/VEB: per-anchor LoS Fisher information over channel
/// parameters (analytic Slepian-Bangs), chain rule to the state via the
/// geometry Jacobian, gains kept as per-anchor nuisance parameters.
inline StateBounds peb_oeb_veb(const Scene& scene, const GridConfig& grid,
                               const TxRxConfig& txrx, const ArrayGeometry& rx_array,
                               const ArrayGeometry& tx_array,
                               const StateBoundOptions& opt = {}) {
    if (scene.anchors.empty()) throw std::invalid_argument("scene has no anchors");
    const int n_anchors = int(scene.anchors.size());
    DomainFlags flags = measurable_domains(grid, txrx, rx_array, tx_array);

    // State layout (FIM units): position(3), [bias_m], [rotvec(3)], [vel(3)]
    std::vector<std::string> state_labels = {"x", "y", "z"};
    if (opt.estimate_bias) state_labels.push_back("bias_m");
    if (opt.estimate_orientation)
        for (const char* s : {"rot_x", "rot_y", "rot_z"}) state_labels.push_back(s);
    if (opt.estimate_velocity)
        for (const char* s : {"vx", "vy", "vz"}) state_labels.push_back(s);
    const int ds = int(state_labels.size());
    const int n_global = ds + 2 * n_anchors;

    MatX j_state = MatX::Zero(n_global, n_global);

    for (int i = 0; i < n_anchors; ++i) {
        const auto& anchor = scene.anchors[i];
        GeoParams geo = los_params(anchor, scene.ue, scene.link, grid.carrier);
        double dist = (scene.ue.position - anchor.position).norm();
        double amp = std::sqrt(los_gain(dist, grid.carrier));
        PathParams path;
        path.gain = amp * std::exp(kImag * opt.gain_phase_rad);
        path.geo = geo;
        path.tag = PathTag::LoS;

        MultipathModelConfig mcfg{grid, txrx, rx_array, tx_array, {flags}, {amp}};
        MeanModel model = multipath_observation_model(mcfg, {path});
        VecX kappa = multipath_kappa(mcfg, {path});
        FisherInfo j_eta = fim_slepian_bangs(model, kappa, txrx.noise_psd,
                                             multipath_labels(mcfg), flags.count());

        // Geometry Jacobian in FIM units: delay row in meters; the bias
        // column is then exactly 1 in the delay row.
        JacobianResult jr = los_state_jacobian(anchor, scene.ue, scene.link, grid.carrier);
        if (jr.degenerate)
            throw DegenerateGeometryError("peb_oeb_veb: degenerate anchor-UE geometry");
        MatX full = jr.d_eta_d_state;  // 6 x 7 (pos, bias, rot), SI units
        full.row(4) *= kSpeedOfLight;   // delay -> meters
        full.col(3) /= kSpeedOfLight;   // bias -> meters; d(c tau)/d(cB) = 1
        // Velocity columns of the Doppler row (analytic: u / lambda).
        Vec3 u_to_anchor = (anchor.position - scene.ue.position).normalized();
        VecX dop_vel = u_to_anchor / grid.wavelength();

        const int d_eta = flags.count();
        MatX t = MatX::Zero(d_eta + 2, n_global);
        int r = 0;
        for (int comp = 0; comp < 6; ++comp) {
            if (!flags.get(comp)) continue;
            t.block(r, 0, 1, 3) = full.block(comp, 0, 1, 3);
            int c = 3;
            if (opt.estimate_bias) t(r, c++) = full(comp, 3);
            if (opt.estimate_orientation) {
                t.block(r, c, 1, 3) = full.block(comp, 4, 1, 3);
                c += 3;
            }
            if (opt.estimate_velocity && comp == 5) t.block(r, c, 1, 3) = dop_vel.transpose();
            ++r;
        }
        t(d_eta, ds + 2 * i) = 1.0;
        t(d_eta + 1, ds + 2 * i + 1) = 1.0;

        j_state.noalias() += t.transpose() * j_eta.matrix * t;
    }
    j_state = 0.5 * (j_state + j_state.transpose().eval());

    StateBounds out;
    out.state_fim.matrix = j_state;
    out.state_fim.labels = state_labels;
    for (int i = 0; i < n_anchors; ++i) {
        out.state_fim.labels.push_back("gain_re_a" + std::to_string(i));
        out.state_fim.labels.push_back("gain_im_a" + std::to_string(i));
    }
    out.state_fim.n_interest = ds;
    out.condition_number = detail::condition_number(j_state);
    out.identifiable = std::isfinite(out.condition_number) &&
                       out.condition_number <= opt.cond_threshold;
    if (!out.identifiable) return out;

    auto inv = detail::invert_quad(j_state);
    if (!inv) {
        out.identifiable = false;
        return out;
    }
    out.peb = std::sqrt(inv->topLeftCorner(3, 3).trace());
    int at = 3;
    if (opt.estimate_bias) ++at;
    if (opt.estimate_orientation) {
        out.oeb = std::sqrt(inv->block(at, at, 3, 3).trace());
        at += 3;
    }
    if (opt.estimate_velocity) out.veb = std::sqrt(inv->block(at, at, 3, 3).trace());
    return out;
}

/// Closed-form single-path delay bound in meters:
/// c / sqrt(8 pi^2 SNR beta^2), with beta the rms bandwidth after mean
/// removal and SNR the coherently integrated signal-to-noise ratio.
/// Independent cross-check for the calibrated sweep.
inline double single_path_delay_crb_m(int n_subcarriers, double subcarrier_spacing_hz,
                                      double integrated_snr) {
    double nn = n_subcarriers;
    double beta2 = subcarrier_spacing_hz * subcarrier_spacing_hz * (nn * nn - 1.0) / 12.0;
    return kSpeedOfLight / std::sqrt(8.0 * kPi * kPi * integrated_snr * beta2);
}

}  // namespace locsense
