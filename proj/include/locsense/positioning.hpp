// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "locsense/bounds.hpp"
#include "locsense/core.hpp"
#include "locsense/geometry.hpp"

namespace locsense {

// ---------------------------------------------------------------------------
// Measurements
// ---------------------------------------------------------------------------

/// Estimated LoS channel parameters of one anchor link, with uncertainty.
/// The covariance rows/columns follow geo_param_names() order restricted
/// to the active domains, in SI units.
struct Measurement {
    int anchor_id = 0;
    GeoParams eta;
    DomainFlags flags;
    MatX covariance;
};

/// What the positioning stage should estimate, plus scene context.
struct PositioningProblem {
    std::vector<AnchorState> anchors;
    LinkDirection link = LinkDirection::Downlink;
    double carrier_hz = 3.5e9;
    bool estimate_bias = true;
    bool estimate_orientation = false;
    bool planar = false;   // constrain z to fixed_z
    double fixed_z = 0.0;
    Vec3 bounds_min = Vec3(-100.0, -100.0, -100.0);  // grid-fallback box
    Vec3 bounds_max = Vec3(100.0, 100.0, 100.0);

    const AnchorState& anchor_by_id(int id) const {
        for (const auto& a : anchors)
            if (a.id == id) return a;
        throw std::invalid_argument("unknown anchor id " + std::to_string(id));
    }

    int n_state() const {
        return (planar ? 2 : 3) + (estimate_bias ? 1 : 0) + (estimate_orientation ? 3 : 0);
    }

    std::vector<std::string> component_names() const {
        std::vector<std::string> names = {"x", "y"};
        if (!planar) names.push_back("z");
        if (estimate_bias) names.push_back("clock_bias");
        if (estimate_orientation)
            for (const char* s : {"rot_x", "rot_y", "rot_z"}) names.push_back(s);
        return names;
    }
};

/// Positioning output: the state, its covariance over the estimated
/// components (position in m, clock bias in s, orientation increment in
/// rad; order per PositioningProblem::component_names), the final cost
/// and iteration count.
struct StateEstimate {
    UEState state;
    MatX covariance;
    std::vector<std::string> components;
    double cost = 0.0;
    int iterations = 0;
    bool converged = true;
    bool singular_weight = false;
};

namespace detail {

/// Residual eta_hat - h(s) over the active domains, angles wrapped,
/// delay expressed in meters for numerical balance.
inline VecX measurement_residual(const Measurement& m, const GeoParams& predicted) {
    std::vector<double> r;
    if (m.flags.aoa_az) r.push_back(angle_diff(m.eta.aoa(0), predicted.aoa(0)));
    if (m.flags.aoa_el) r.push_back(m.eta.aoa(1) - predicted.aoa(1));
    if (m.flags.aod_az) r.push_back(angle_diff(m.eta.aod(0), predicted.aod(0)));
    if (m.flags.aod_el) r.push_back(m.eta.aod(1) - predicted.aod(1));
    if (m.flags.delay) r.push_back((m.eta.delay - predicted.delay) * kSpeedOfLight);
    if (m.flags.doppler) r.push_back(m.eta.doppler - predicted.doppler);
    return Eigen::Map<VecX>(r.data(), Eigen::Index(r.size()));
}

/// Covariance in the same scaled units as measurement_residual (delay
/// rows/cols multiplied by c).
inline MatX scaled_covariance(const Measurement& m) {
    MatX cov = m.covariance;
    int idx = 0;
    for (int comp = 0; comp < 6; ++comp) {
        if (!m.flags.get(comp)) continue;
        if (comp == 4) {
            cov.row(idx) *= kSpeedOfLight;
            cov.col(idx) *= kSpeedOfLight;
        }
        ++idx;
    }
    return cov;
}

/// Solves cov * x = r, falling back to the pseudo-inverse for singular
/// covariances (flag reported through *singular).
inline VecX weighted_solve(const MatX& cov, const VecX& r, bool* singular) {
    Eigen::SelfAdjointEigenSolver<MatX> es(cov);
    double max_eig = es.eigenvalues().cwiseAbs().maxCoeff();
    if (es.info() == Eigen::Success && max_eig > 0.0 &&
        es.eigenvalues().minCoeff() > 1e-12 * max_eig) {
        Eigen::LDLT<MatX> ldlt(cov);
        return ldlt.solve(r);
    }
    if (singular) *singular = true;
    Eigen::CompleteOrthogonalDecomposition<MatX> cod(cov);
    return cod.solve(r);
}

inline GeoParams predict(const PositioningProblem& prob, const UEState& state,
                         const Measurement& m) {
    return los_params(prob.anchor_by_id(m.anchor_id), state, prob.link, prob.carrier_hz);
}

}  // namespace detail

/// Weighted nonlinear LS cost: sum over measurements of
/// (eta_hat - h(s))^T Sigma^-1 (eta_hat - h(s)), angle residuals wrapped
/// on the circle. Exactly zero at the truth for noiseless measurements.
inline double wnls_cost(const UEState& state, const std::vector<Measurement>& measurements,
                        const PositioningProblem& prob, bool* singular_weight = nullptr) {
    if (measurements.empty()) throw std::invalid_argument("wnls_cost: no measurements");
    double cost = 0.0;
    for (const auto& m : measurements) {
        VecX r = detail::measurement_residual(m, detail::predict(prob, state, m));
        MatX cov = detail::scaled_covariance(m);
        cost += r.dot(detail::weighted_solve(cov, r, singular_weight));
    }
    return cost;
}

// ---------------------------------------------------------------------------
// Coarse initialization
// ---------------------------------------------------------------------------

namespace detail {

/// Closed-form pseudorange solve for [x; b] from rho_i = ||x - x_i|| + b
/// via the Lorentz-metric quadratic (works for >= dim+1 anchors, LS for
/// more). Positions restricted to the first `dim` coordinates.
inline std::optional<std::pair<Vec3, double>> pseudorange_solve(
    const std::vector<Vec3>& anchors, const std::vector<double>& rho, int dim,
    double fixed_z) {
    const int n = int(anchors.size());
    const int cols = dim + 1;
    if (n < cols) return std::nullopt;
    MatX b(n, cols);
    VecX a(n);
    for (int i = 0; i < n; ++i) {
        VecX xi = anchors[std::size_t(i)].head(dim);
        double rho_i = rho[std::size_t(i)];
        double zoff = dim == 2 ? fixed_z - anchors[std::size_t(i)](2) : 0.0;
        // Fold the fixed out-of-plane offset into the range equation.
        double rho_eff2 = rho_i * rho_i;
        b.row(i).head(dim) = xi.transpose();
        b(i, dim) = rho_i;
        a(i) = 0.5 * (xi.squaredNorm() + zoff * zoff - rho_eff2);
    }
    VecX ones = VecX::Ones(n);
    Eigen::CompleteOrthogonalDecomposition<MatX> cod(b);
    if (cod.rank() < cols) return std::nullopt;
    VecX bp_a = cod.solve(a);
    VecX bp_e = cod.solve(ones);
    auto lorentz = [dim](const VecX& u, const VecX& v) {
        return u.head(dim).dot(v.head(dim)) - u(dim) * v(dim);
    };
    // u = M B^+ (a + lambda e), with <u,u> = 2 lambda.
    VecX p(cols), q(cols);
    p.head(dim) = bp_a.head(dim);
    p(dim) = -bp_a(dim);
    q.head(dim) = bp_e.head(dim);
    q(dim) = -bp_e(dim);
    double qq = lorentz(q, q), pq = lorentz(p, q), pp = lorentz(p, p);
    std::vector<double> lambdas;
    if (std::abs(qq) < 1e-12) {
        if (std::abs(2.0 * pq - 2.0) > 1e-12) lambdas.push_back(pp / (2.0 - 2.0 * pq));
    } else {
        double disc = (2.0 * pq - 2.0) * (2.0 * pq - 2.0) - 4.0 * qq * pp;
        if (disc < 0.0) return std::nullopt;
        double s = std::sqrt(disc);
        lambdas.push_back((-(2.0 * pq - 2.0) + s) / (2.0 * qq));
        lambdas.push_back((-(2.0 * pq - 2.0) - s) / (2.0 * qq));
    }
    std::optional<std::pair<Vec3, double>> best;
    double best_res = std::numeric_limits<double>::infinity();
    for (double lam : lambdas) {
        VecX u = p + lam * q;  // u = [x; b] directly (M already applied)
        Vec3 x = Vec3::Zero();
        x.head(dim) = u.head(dim);
        if (dim == 2) x(2) = fixed_z;
        double bias = u(dim);
        double res = 0.0;
        for (int i = 0; i < n; ++i) {
            double pred = (x - anchors[std::size_t(i)]).norm() + bias;
            res += (pred - rho[std::size_t(i)]) * (pred - rho[std::size_t(i)]);
        }
        if (res < best_res) {
            best_res = res;
            best = std::make_pair(x, bias);
        }
    }
    return best;
}

/// LS intersection of the global rays (x - x_i) parallel to g_i:
/// minimize sum ||(I - g g^T)(x - x_i)||^2.
inline std::optional<Vec3> bearing_intersection(const std::vector<Vec3>& origins,
                                                const std::vector<Vec3>& dirs, int dim,
                                                double fixed_z) {
    Mat3 lhs = Mat3::Zero();
    Vec3 rhs = Vec3::Zero();
    for (std::size_t i = 0; i < origins.size(); ++i) {
        Mat3 proj = Mat3::Identity() - dirs[i] * dirs[i].transpose();
        lhs += proj;
        rhs += proj * origins[i];
    }
    if (dim == 2) {
        // Constrain z = fixed_z: move the z column to the right-hand side.
        Eigen::Matrix2d l2 = lhs.topLeftCorner<2, 2>();
        Vec2 r2 = rhs.head<2>() - lhs.block<2, 1>(0, 2) * fixed_z;
        Eigen::FullPivLU<Eigen::Matrix2d> lu(l2);
        if (!lu.isInvertible()) return std::nullopt;
        Vec2 xy = lu.solve(r2);
        return Vec3(xy(0), xy(1), fixed_z);
    }
    Eigen::FullPivLU<Mat3> lu(lhs);
    if (!lu.isInvertible()) return std::nullopt;
    return Vec3(lu.solve(rhs));
}

}  // namespace detail

/// Coarse state from geometric reasoning: pseudorange closed form when
/// enough ToAs are present, bearing intersection for angle-only sets,
/// single-anchor bearing+range when the bias is known, and a coarse grid
/// search over the problem bounds otherwise. Throws NonIdentifiableError
/// with the missing domains when no route can determine the state.
inline UEState coarse_init(const std::vector<Measurement>& measurements,
                           const PositioningProblem& prob) {
    const int dim = prob.planar ? 2 : 3;

    std::vector<Vec3> toa_anchors;
    std::vector<double> rho;
    std::vector<Vec3> ray_origins, ray_dirs;
    for (const auto& m : measurements) {
        const auto& anchor = prob.anchor_by_id(m.anchor_id);
        if (m.flags.delay) {
            toa_anchors.push_back(anchor.position);
            rho.push_back(m.eta.delay * kSpeedOfLight);
        }
        // In DL the AoD at the anchor points toward the UE in the anchor
        // frame; a full (az, el) pair pins the global ray. In planar mode
        // azimuth alone suffices.
        bool has_ray = prob.link == LinkDirection::Downlink &&
                       (m.flags.aod_az && (m.flags.aod_el || prob.planar));
        if (has_ray) {
            double el = m.flags.aod_el ? m.eta.aod(1) : 0.0;
            Vec3 g = anchor.orientation.matrix() * direction_from_angles(m.eta.aod(0), el);
            ray_origins.push_back(anchor.position);
            ray_dirs.push_back(g.normalized());
        }
    }

    UEState out;
    out.position = 0.5 * (prob.bounds_min + prob.bounds_max);
    if (prob.planar) out.position(2) = prob.fixed_z;

    // Route 1: pseudoranges (dim+1 anchors close the quadratic with
    // unknown bias; the same count feeds the difference solve without it).
    if (int(toa_anchors.size()) >= dim + 1) {
        if (prob.estimate_bias) {
            auto sol = detail::pseudorange_solve(toa_anchors, rho, dim, prob.fixed_z);
            if (sol) {
                out.position = sol->first;
                out.clock_bias = sol->second / kSpeedOfLight;
                return out;
            }
        } else {
            // Known bias: difference linearization of the range equations.
            const int n = int(toa_anchors.size());
            MatX a(n - 1, dim);
            VecX b(n - 1);
            for (int i = 1; i < n; ++i) {
                VecX d = (toa_anchors[std::size_t(i)] - toa_anchors[0]).head(dim);
                a.row(i - 1) = 2.0 * d.transpose();
                double zi = dim == 2 ? prob.fixed_z - toa_anchors[std::size_t(i)](2) : 0.0;
                double z0 = dim == 2 ? prob.fixed_z - toa_anchors[0](2) : 0.0;
                b(i - 1) = rho[0] * rho[0] - rho[std::size_t(i)] * rho[std::size_t(i)] +
                           toa_anchors[std::size_t(i)].head(dim).squaredNorm() -
                           toa_anchors[0].head(dim).squaredNorm() + zi * zi - z0 * z0;
            }
            Eigen::CompleteOrthogonalDecomposition<MatX> cod(a);
            if (cod.rank() >= dim) {
                VecX x = cod.solve(b);
                out.position.head(dim) = x;
                if (prob.planar) out.position(2) = prob.fixed_z;
                return out;
            }
        }
    }

    // Route 2: bearing intersection (two or more rays).
    if (ray_origins.size() >= 2) {
        auto x = detail::bearing_intersection(ray_origins, ray_dirs, dim, prob.fixed_z);
        if (x) {
            out.position = *x;
            if (prob.estimate_bias && !rho.empty()) {
                double acc = 0.0;
                for (std::size_t i = 0; i < rho.size(); ++i)
                    acc += rho[i] - (out.position - toa_anchors[i]).norm();
                out.clock_bias = acc / double(rho.size()) / kSpeedOfLight;
            }
            return out;
        }
    }

    // Route 3: single anchor, bearing plus range (bias known).
    if (ray_origins.size() == 1 && !prob.estimate_bias && rho.size() >= 1) {
        out.position = ray_origins[0] + rho[0] * ray_dirs[0];
        return out;
    }

    // Constraint counting gate before the brute-force fallback: a ToA
    // contributes one constraint, a 3D ray two, a planar ray one.
    int n_constraints =
        int(toa_anchors.size()) + int(ray_origins.size()) * (prob.planar ? 1 : 2);
    if (n_constraints < prob.n_state()) {
        std::string msg = "coarse_init: under-determined measurement set (";
        msg += std::to_string(toa_anchors.size()) + " ToA + " +
               std::to_string(ray_origins.size()) + " bearing constraints for " +
               std::to_string(prob.n_state()) + " state components)";
        if (toa_anchors.size() == 1 && prob.estimate_bias)
            msg += "; a single ToA with unknown clock bias is range-ambiguous";
        if (toa_anchors.empty()) msg += "; no ToA domain present";
        if (ray_origins.empty()) msg += "; no usable bearing domain present";
        throw NonIdentifiableError(msg);
    }

    // Route 4: coarse grid over the problem bounds (degenerate fallback),
    // with the bias profiled per candidate from the ToA residual mean.
    if (!toa_anchors.empty() || ray_origins.size() >= 1) {
        const int steps = 21;
        double best_cost = std::numeric_limits<double>::infinity();
        UEState best = out;
        Vec3 lo = prob.bounds_min, hi = prob.bounds_max;
        int zsteps = prob.planar ? 1 : steps;
        for (int ix = 0; ix < steps; ++ix)
            for (int iy = 0; iy < steps; ++iy)
                for (int iz = 0; iz < zsteps; ++iz) {
                    UEState cand;
                    cand.position(0) = lo(0) + (hi(0) - lo(0)) * ix / (steps - 1.0);
                    cand.position(1) = lo(1) + (hi(1) - lo(1)) * iy / (steps - 1.0);
                    cand.position(2) =
                        prob.planar ? prob.fixed_z
                                    : lo(2) + (hi(2) - lo(2)) * iz / (steps - 1.0);
                    if (prob.estimate_bias && !rho.empty()) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < rho.size(); ++i)
                            acc += rho[i] - (cand.position - toa_anchors[i]).norm();
                        cand.clock_bias = acc / double(rho.size()) / kSpeedOfLight;
                    }
                    double c = wnls_cost(cand, measurements, prob);
                    if (c < best_cost) {
                        best_cost = c;
                        best = cand;
                    }
                }
        return best;
    }

    std::string missing = "coarse_init: measurement set cannot determine the state;";
    missing += " have " + std::to_string(toa_anchors.size()) + " ToA and " +
               std::to_string(ray_origins.size()) + " bearing constraints for " +
               std::to_string(prob.n_state()) + " unknowns";
    if (toa_anchors.size() == 1 && prob.estimate_bias)
        missing += " (single ToA with unknown clock bias is range-ambiguous)";
    throw NonIdentifiableError(missing);
}

// ---------------------------------------------------------------------------
// Gauss-Newton refinement
// ---------------------------------------------------------------------------

struct GaussNewtonOptions {
    int max_iterations = 50;
    double step_tol = 1e-12;
    double damping_init = 1e-3;
    double damping_up = 10.0;
    double damping_down = 0.1;
};

namespace detail {

/// Rows of the geometry Jacobian for the active domains, columns for the
/// estimated components, in scaled units (delay and bias in meters).
inline MatX measurement_jacobian(const PositioningProblem& prob, const UEState& state,
                                 const Measurement& m) {
    JacobianResult jr = los_state_jacobian(prob.anchor_by_id(m.anchor_id), state,
                                           prob.link, prob.carrier_hz);
    MatX full = jr.d_eta_d_state;  // 6 x 7: pos, bias(s), rot
    full.row(4) *= kSpeedOfLight;  // delay -> meters, bias column becomes c
    const int n_rows = m.flags.count();
    MatX out(n_rows, prob.n_state());
    int r = 0;
    for (int comp = 0; comp < 6; ++comp) {
        if (!m.flags.get(comp)) continue;
        int c = 0;
        out(r, c++) = full(comp, 0);
        out(r, c++) = full(comp, 1);
        if (!prob.planar) out(r, c++) = full(comp, 2);
        if (prob.estimate_bias) out(r, c++) = full(comp, 3) / kSpeedOfLight;  // per meter of cB
        if (prob.estimate_orientation)
            for (int j = 0; j < 3; ++j) out(r, c++) = full(comp, 4 + j);
        ++r;
    }
    return out;
}

inline UEState apply_step(const PositioningProblem& prob, const UEState& s, const VecX& dx) {
    UEState out = s;
    int c = 0;
    out.position(0) += dx(c++);
    out.position(1) += dx(c++);
    if (!prob.planar) out.position(2) += dx(c++);
    if (prob.estimate_bias) out.clock_bias += dx(c++) / kSpeedOfLight;  // step in meters
    if (prob.estimate_orientation) {
        out.orientation = s.orientation.perturbed(Vec3(dx(c), dx(c + 1), dx(c + 2)));
        c += 3;
    }
    return out;
}

}  // namespace detail

/// Damped Gauss-Newton descent on wnls_cost from the coarse initialization
/// (cost is monotone non-increasing; rejected steps raise the damping).
/// The covariance follows the usual weighted-LS information form
/// (sum of J^T Sigma^-1 J, inverted at the optimum).
inline StateEstimate gauss_newton_refine(const UEState& init,
                                         const std::vector<Measurement>& measurements,
                                         const PositioningProblem& prob,
                                         const GaussNewtonOptions& opt = {}) {
    if (measurements.empty())
        throw std::invalid_argument("gauss_newton_refine: no measurements");
    StateEstimate out;
    out.components = prob.component_names();
    const int ns = prob.n_state();

    UEState state = init;
    if (prob.planar) state.position(2) = prob.fixed_z;
    bool singular = false;
    double cost = wnls_cost(state, measurements, prob, &singular);
    double damping = opt.damping_init;
    int it = 0;
    bool converged = false;

    for (; it < opt.max_iterations; ++it) {
        MatX h = MatX::Zero(ns, ns);
        VecX g = VecX::Zero(ns);
        for (const auto& m : measurements) {
            VecX r = detail::measurement_residual(m, detail::predict(prob, state, m));
            MatX j = detail::measurement_jacobian(prob, state, m);
            MatX cov = detail::scaled_covariance(m);
            MatX wj(int(r.size()), ns);
            for (int c = 0; c < ns; ++c)
                wj.col(c) = detail::weighted_solve(cov, j.col(c), &singular);
            h.noalias() += j.transpose() * wj;
            g.noalias() += wj.transpose() * r;
        }
        VecX step = (h + damping * MatX(h.diagonal().asDiagonal())
                             .cwiseMax(1e-12 * MatX::Identity(ns, ns)))
                        .ldlt()
                        .solve(g);
        if (!step.allFinite()) break;
        UEState trial = detail::apply_step(prob, state, step);
        double trial_cost = wnls_cost(trial, measurements, prob, &singular);
        if (trial_cost <= cost) {
            double rel_step = step.norm() / std::max(1.0, state.position.norm());
            state = trial;
            cost = trial_cost;
            damping = std::max(1e-12, damping * opt.damping_down);
            if (rel_step < opt.step_tol) {
                converged = true;
                ++it;
                break;
            }
        } else {
            damping *= opt.damping_up;
            if (damping > 1e12) break;
        }
    }

    // Covariance at the optimum, converted back to SI for the bias.
    MatX h = MatX::Zero(ns, ns);
    for (const auto& m : measurements) {
        MatX j = detail::measurement_jacobian(prob, state, m);
        MatX cov = detail::scaled_covariance(m);
        MatX wj(j.rows(), ns);
        for (int c = 0; c < ns; ++c)
            wj.col(c) = detail::weighted_solve(cov, j.col(c), &singular);
        h.noalias() += j.transpose() * wj;
    }
    auto hinv = detail::invert_quad(h);
    if (hinv) {
        MatX cov = *hinv;
        if (prob.estimate_bias) {
            int bi = prob.planar ? 2 : 3;
            cov.row(bi) /= kSpeedOfLight;
            cov.col(bi) /= kSpeedOfLight;
        }
        out.covariance = 0.5 * (cov + cov.transpose().eval());
    } else {
        out.covariance = MatX::Constant(ns, ns, std::numeric_limits<double>::quiet_NaN());
        converged = false;
    }

    out.state = state;
    out.cost = cost;
    out.iterations = it;
    out.converged = converged;
    out.singular_weight = singular;
    return out;
}

// ---------------------------------------------------------------------------
// Direct positioning oracle (exhaustive grid)
// ---------------------------------------------------------------------------

struct DirectGridSpec {
    Vec3 min_corner = Vec3::Zero();
    Vec3 max_corner = Vec3::Zero();
    std::array<int, 3> shape = {1, 1, 1};
};

struct DirectGridResult {
    UEState state;
    double log_likelihood = -std::numeric_limits<double>::infinity();
    bool on_boundary = false;
    std::array<int, 3> index = {0, 0, 0};
    std::array<double, 3> cell_size = {0.0, 0.0, 0.0};
};

/// Exhaustive ML scan of the raw observations over a position grid (clock
/// bias and orientation fixed from `scene.ue`), profiling each anchor's
/// complex gain by LS per candidate. Desk-scale oracle, not a production
/// path. Ties break toward the lowest linear index.
inline DirectGridResult direct_position_grid(
    const std::vector<Observation>& per_anchor_obs, const Scene& scene,
    const GridConfig& grid, const TxRxConfig& txrx, const ArrayGeometry& rx_array,
    const ArrayGeometry& tx_array, const DirectGridSpec& spec) {
    if (per_anchor_obs.size() != scene.anchors.size())
        throw std::invalid_argument("one observation per anchor required");

    // Stack each anchor's observation once.
    std::vector<CVecX> y(per_anchor_obs.size());
    for (std::size_t i = 0; i < per_anchor_obs.size(); ++i) {
        const auto& obs = per_anchor_obs[i];
        CVecX v(Eigen::Index(obs.n_subcarriers) * obs.n_symbols * obs.m_rx);
        Eigen::Index at = 0;
        for (int k = 0; k < obs.n_symbols; ++k)
            for (int n = 0; n < obs.n_subcarriers; ++n) {
                v.segment(at, obs.m_rx) = obs.at(n, k);
                at += obs.m_rx;
            }
        y[i] = std::move(v);
    }

    DirectGridResult best;
    DomainFlags flags;  // unit-gain template path; domains irrelevant here
    for (int ix = 0; ix < spec.shape[0]; ++ix)
        for (int iy = 0; iy < spec.shape[1]; ++iy)
            for (int iz = 0; iz < spec.shape[2]; ++iz) {
                UEState cand = scene.ue;
                for (int d = 0; d < 3; ++d) {
                    int idx = d == 0 ? ix : (d == 1 ? iy : iz);
                    double lo = spec.min_corner(d), hi = spec.max_corner(d);
                    cand.position(d) =
                        spec.shape[d] > 1 ? lo + (hi - lo) * idx / (spec.shape[d] - 1.0)
                                          : lo;
                }
                double loglik = 0.0;
                for (std::size_t i = 0; i < scene.anchors.size(); ++i) {
                    PathParams tpl;
                    tpl.gain = 1.0;
                    tpl.geo = los_params(scene.anchors[i], cand, scene.link, grid.carrier);
                    MultipathModelConfig mcfg{grid, txrx, rx_array, tx_array, {flags}};
                    MeanModel model = multipath_observation_model(mcfg, {tpl});
                    CVecX mu = model.mean(multipath_kappa(mcfg, {tpl}));
                    // LS-profiled gain: loglik gain is |<mu, y>|^2 / ||mu||^2.
                    double mu2 = mu.squaredNorm();
                    if (mu2 > 0.0) loglik += std::norm(mu.dot(y[i])) / mu2;
                }
                if (loglik > best.log_likelihood) {
                    best.log_likelihood = loglik;
                    best.state = cand;
                    best.index = {ix, iy, iz};
                }
            }
    for (int d = 0; d < 3; ++d) {
        best.cell_size[d] =
            spec.shape[d] > 1
                ? (spec.max_corner(d) - spec.min_corner(d)) / (spec.shape[d] - 1.0)
                : 0.0;
        best.on_boundary = best.on_boundary ||
                           (spec.shape[d] > 1 &&
                            (best.index[d] == 0 || best.index[d] == spec.shape[d] - 1));
    }
    return best;
}

}  // namespace locsense
