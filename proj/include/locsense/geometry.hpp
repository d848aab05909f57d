// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "locsense/core.hpp"

namespace locsense {

// ---------------------------------------------------------------------------
// Rotation
// ---------------------------------------------------------------------------

/// 3D rotation stored as an orthonormal matrix, with a unit-quaternion view.
///
/// Conventions: local->global, i.e. a direction u expressed in the node's
/// local frame maps to matrix()*u in the global frame. Perturbations are
/// applied on the right (body frame): perturbed(d) = R * Exp(d).
class Rotation {
public:
    Rotation() : r_(Mat3::Identity()) {}

    static Rotation identity() { return Rotation(); }

    static Rotation from_matrix(const Mat3& r) {
        Mat3 err = r.transpose() * r - Mat3::Identity();
        if (err.cwiseAbs().maxCoeff() > 1e-9)
            throw std::invalid_argument("rotation matrix is not orthonormal");
        if (std::abs(r.determinant() - 1.0) > 1e-9)
            throw std::invalid_argument("rotation matrix determinant is not +1");
        Rotation out;
        // Re-orthonormalize so the 1e-12 orthonormality contract holds
        // even for inputs that are only approximately orthonormal.
        Eigen::Quaterniond q(r);
        q.normalize();
        out.r_ = q.toRotationMatrix();
        return out;
    }

    /// Quaternion ordered (w, x, y, z).
    static Rotation from_quaternion(const Eigen::Vector4d& q) {
        double n = q.norm();
        if (std::abs(n - 1.0) > 1e-6)
            throw std::invalid_argument("quaternion is not unit norm");
        Eigen::Quaterniond eq(q(0), q(1), q(2), q(3));
        eq.normalize();
        Rotation out;
        out.r_ = eq.toRotationMatrix();
        return out;
    }

    /// Rotation-vector (axis * angle) exponential map.
    static Rotation from_rotvec(const Vec3& w) {
        double angle = w.norm();
        Rotation out;
        if (angle < 1e-300) return out;
        out.r_ = Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
        return out;
    }

    /// Intrinsic Z-Y-X (yaw about z, then pitch about y, then roll about x).
    static Rotation from_yaw_pitch_roll(double yaw, double pitch, double roll) {
        Rotation out;
        out.r_ = (Eigen::AngleAxisd(yaw, Vec3::UnitZ()) *
                  Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
                  Eigen::AngleAxisd(roll, Vec3::UnitX()))
                     .toRotationMatrix();
        return out;
    }

    const Mat3& matrix() const { return r_; }

    /// Quaternion (w, x, y, z) with w >= 0 canonical sign.
    Eigen::Vector4d quaternion() const {
        Eigen::Quaterniond q(r_);
        if (q.w() < 0.0) q.coeffs() *= -1.0;
        return Eigen::Vector4d(q.w(), q.x(), q.y(), q.z());
    }

    /// Body-frame perturbation: R * Exp(delta).
    Rotation perturbed(const Vec3& delta) const {
        Rotation out;
        out.r_ = r_ * from_rotvec(delta).r_;
        return out;
    }

private:
    Mat3 r_;
};

// ---------------------------------------------------------------------------
// Node and object states
// ---------------------------------------------------------------------------

/// Infrastructure node with a known pose. Anchors are time-synchronized
/// among themselves; their clock bias is zero by definition.
struct AnchorState {
    int id = 0;
    Vec3 position = Vec3::Zero();
    Rotation orientation;
};

/// Mobile user state: position, clock bias relative to the synchronized
/// anchors, orientation, and (optionally) velocity.
struct UEState {
    Vec3 position = Vec3::Zero();
    double clock_bias = 0.0;  // [s]
    Rotation orientation;
    Vec3 velocity = Vec3::Zero();  // [m/s]
};

/// Passive point object with a radar cross section.
struct ObjectState {
    Vec3 position = Vec3::Zero();
    Vec3 velocity = Vec3::Zero();
    double rcs = 1.0;  // [m^2], > 0

    ObjectState() = default;
    ObjectState(const Vec3& pos, const Vec3& vel, double rcs_m2)
        : position(pos), velocity(vel), rcs(rcs_m2) {
        if (rcs <= 0.0) throw std::invalid_argument("rcs must be positive");
    }
};

/// Geometric parameters of one propagation path.
///
/// Angles are (azimuth, elevation) in the local frame of the receiving /
/// transmitting node. The frame convention is right-handed with boresight
/// along +x: a unit direction is
///   u(az, el) = [cos(el)cos(az), cos(el)sin(az), sin(el)],
/// azimuth in (-pi, pi], elevation in [-pi/2, pi/2].
struct GeoParams {
    Vec2 aoa = Vec2::Zero();  // [rad] at the receiver
    Vec2 aod = Vec2::Zero();  // [rad] at the transmitter
    double delay = 0.0;       // [s]
    double doppler = 0.0;     // [Hz]
};

/// Unit direction vector for (azimuth, elevation) in the local frame.
inline Vec3 direction_from_angles(double az, double el) {
    return Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
}

/// Inverse of direction_from_angles. u need not be normalized.
inline Vec2 angles_from_direction(const Vec3& u) {
    double n = u.norm();
    if (n <= 0.0) throw DegenerateGeometryError("zero direction vector");
    Vec3 v = u / n;
    double el = std::asin(std::clamp(v.z(), -1.0, 1.0));
    double az = (std::abs(v.x()) < 1e-300 && std::abs(v.y()) < 1e-300)
                    ? 0.0
                    : std::atan2(v.y(), v.x());
    return Vec2(wrap_angle(az), el);
}

/// Angles of the global direction `u_global` seen from a node with the
/// given orientation (direction expressed in the node's local frame).
inline Vec2 local_angles(const Rotation& orientation, const Vec3& u_global) {
    return angles_from_direction(orientation.matrix().transpose() * u_global);
}

enum class LinkDirection { Downlink, Uplink };

// ---------------------------------------------------------------------------
// State -> channel-parameter maps
// ---------------------------------------------------------------------------

/// LoS channel parameters of the anchor-UE link.
///
/// delay = ||x_ue - x_anchor|| / c + clock_bias. In downlink the anchor
/// transmits: AoD is the direction to the UE in the anchor frame (position
/// only), AoA is the direction to the anchor in the UE frame (position and
/// orientation). Roles swap in uplink. Doppler follows a one-way
/// convention, nu = v.u / lambda, with u the unit vector from the UE
/// toward the anchor, so closing motion gives positive Doppler.
inline GeoParams los_params(const AnchorState& anchor, const UEState& ue,
                            LinkDirection link, double carrier_hz) {
    Vec3 d = ue.position - anchor.position;
    double dist = d.norm();
    if (dist < 1e-12)
        throw DegenerateGeometryError("anchor and UE positions coincide");
    Vec3 u_to_ue = d / dist;       // global, anchor -> UE
    Vec3 u_to_anchor = -u_to_ue;   // global, UE -> anchor

    GeoParams out;
    out.delay = dist / kSpeedOfLight + ue.clock_bias;
    double lambda = kSpeedOfLight / carrier_hz;
    out.doppler = ue.velocity.dot(u_to_anchor) / lambda;
    if (link == LinkDirection::Downlink) {
        out.aod = local_angles(anchor.orientation, u_to_ue);
        out.aoa = local_angles(ue.orientation, u_to_anchor);
    } else {
        out.aod = local_angles(ue.orientation, u_to_anchor);
        out.aoa = local_angles(anchor.orientation, u_to_ue);
    }
    return out;
}

/// Monostatic (co-located Tx/Rx) sensing parameters, in the sensor frame.
/// Round-trip delay 2d/c, AoA == AoD, Doppler 2 (v.u)/lambda with u the
/// unit vector from the object toward the sensor.
inline GeoParams monostatic_params(const AnchorState& sensor, const ObjectState& object,
                                   double carrier_hz) {
    Vec3 d = object.position - sensor.position;
    double dist = d.norm();
    if (dist < 1e-12)
        throw DegenerateGeometryError("object coincides with the sensor");
    Vec3 u_to_sensor = -d / dist;

    GeoParams out;
    out.delay = 2.0 * dist / kSpeedOfLight;
    out.aoa = local_angles(sensor.orientation, d / dist);
    out.aod = out.aoa;
    double lambda = kSpeedOfLight / carrier_hz;
    out.doppler = 2.0 * object.velocity.dot(u_to_sensor) / lambda;
    return out;
}

/// Bistatic sensing parameters. Delay is the two-leg sum plus the Rx clock
/// bias (zero when Tx and Rx are synchronized). Doppler combines the
/// velocity projections on the unit vectors from the object toward both
/// endpoints; carrier frequency offset is assumed zero.
inline GeoParams bistatic_params(const AnchorState& tx, const AnchorState& rx,
                                 const ObjectState& object, double clock_bias_s,
                                 double carrier_hz) {
    Vec3 dtx = object.position - tx.position;
    Vec3 drx = object.position - rx.position;
    double ltx = dtx.norm(), lrx = drx.norm();
    if (ltx < 1e-12 || lrx < 1e-12)
        throw DegenerateGeometryError("object coincides with a bistatic endpoint");

    GeoParams out;
    out.delay = (ltx + lrx) / kSpeedOfLight + clock_bias_s;
    out.aod = local_angles(tx.orientation, dtx / ltx);
    out.aoa = local_angles(rx.orientation, -drx / lrx);
    double lambda = kSpeedOfLight / carrier_hz;
    out.doppler = (object.velocity.dot(-dtx / ltx) + object.velocity.dot(-drx / lrx)) / lambda;
    return out;
}

// ---------------------------------------------------------------------------
// Jacobians
// ---------------------------------------------------------------------------

enum class MappingKind { Los, Monostatic, Bistatic };

/// Row order of every parameter Jacobian in this module.
inline const std::vector<std::string>& geo_param_names() {
    static const std::vector<std::string> names = {"aoa_az", "aoa_el", "aod_az",
                                                   "aod_el", "delay",  "doppler"};
    return names;
}

inline VecX geo_params_vector(const GeoParams& g) {
    VecX v(6);
    v << g.aoa(0), g.aoa(1), g.aod(0), g.aod(1), g.delay, g.doppler;
    return v;
}

/// d(eta)/d(state) with per-row provenance.
///
/// Rows follow geo_param_names(). Columns are the state components named in
/// col_names: for the LoS map [x, y, z, clock_bias, rot_x, rot_y, rot_z];
/// for object maps [x, y, z, vx, vy, vz]. Orientation columns are minimal
/// body-frame rotation-vector increments, which keeps downstream Fisher
/// matrices square and free of the R'R = I constraint directions.
struct JacobianResult {
    MatX d_eta_d_state;
    std::vector<std::string> row_names;
    std::vector<std::string> col_names;
    std::vector<bool> analytic_row;  // true: closed form; false: central differences
    bool degenerate = false;         // singular-geometry warning, not an error
};

struct FdSteps {
    double position_m = 1e-6;
    double clock_bias_s = 1e-15;  // unused: the bias row is analytic
    double rotation_rad = 1e-7;
    double velocity_mps = 1e-6;
};

namespace detail {

/// Central finite difference of the 6-vector map, with angle rows wrapped.
template <typename F>
VecX central_diff_geo(const F& eval, double step) {
    GeoParams plus = eval(+step);
    GeoParams minus = eval(-step);
    VecX d(6);
    d(0) = angle_diff(plus.aoa(0), minus.aoa(0));
    d(1) = plus.aoa(1) - minus.aoa(1);
    d(2) = angle_diff(plus.aod(0), minus.aod(0));
    d(3) = plus.aod(1) - minus.aod(1);
    d(4) = plus.delay - minus.delay;
    d(5) = plus.doppler - minus.doppler;
    return d / (2.0 * step);
}

}  // namespace detail

/// Jacobian of los_params with respect to the UE state
/// [position(3), clock_bias, orientation rotvec(3)].
inline JacobianResult los_state_jacobian(const AnchorState& anchor, const UEState& ue,
                                         LinkDirection link, double carrier_hz,
                                         const FdSteps& steps = {}) {
    JacobianResult out;
    out.row_names = geo_param_names();
    out.col_names = {"x", "y", "z", "clock_bias", "rot_x", "rot_y", "rot_z"};
    out.d_eta_d_state = MatX::Zero(6, 7);
    out.analytic_row = {false, false, false, false, true, false};

    Vec3 d = ue.position - anchor.position;
    double dist = d.norm();
    if (dist < 1e-9) {
        out.degenerate = true;
        return out;
    }

    // Delay row: d tau / d x = u' / c, d tau / d B = 1, independent of o.
    out.d_eta_d_state.block<1, 3>(4, 0) = (d / (dist * kSpeedOfLight)).transpose();
    out.d_eta_d_state(4, 3) = 1.0;

    double pos_step = steps.position_m * std::max(1.0, dist);
    for (int j = 0; j < 3; ++j) {
        VecX col = detail::central_diff_geo(
            [&](double h) {
                UEState p = ue;
                p.position(j) += h;
                return los_params(anchor, p, link, carrier_hz);
            },
            pos_step);
        for (int r : {0, 1, 2, 3, 5}) out.d_eta_d_state(r, j) = col(r);
    }
    for (int j = 0; j < 3; ++j) {
        Vec3 axis = Vec3::Zero();
        axis(j) = 1.0;
        VecX col = detail::central_diff_geo(
            [&](double h) {
                UEState p = ue;
                p.orientation = ue.orientation.perturbed(h * axis);
                return los_params(anchor, p, link, carrier_hz);
            },
            steps.rotation_rad);
        for (int r : {0, 1, 2, 3, 5}) out.d_eta_d_state(r, 4 + j) = col(r);
    }
    return out;
}

/// Jacobian of an object-map (monostatic or bistatic) with respect to the
/// object state [position(3), velocity(3)].
inline JacobianResult object_state_jacobian(
    MappingKind kind, const AnchorState& tx, const AnchorState& rx,
    const ObjectState& object, double clock_bias_s, double carrier_hz,
    const FdSteps& steps = {}) {
    if (kind == MappingKind::Los)
        throw std::invalid_argument("use los_state_jacobian for the LoS map");

    JacobianResult out;
    out.row_names = geo_param_names();
    out.col_names = {"x", "y", "z", "vx", "vy", "vz"};
    out.d_eta_d_state = MatX::Zero(6, 6);
    out.analytic_row = {false, false, false, false, true, false};

    auto eval = [&](const ObjectState& o) {
        return kind == MappingKind::Monostatic
                   ? monostatic_params(tx, o, carrier_hz)
                   : bistatic_params(tx, rx, o, clock_bias_s, carrier_hz);
    };

    Vec3 dtx = object.position - tx.position;
    Vec3 drx = object.position - rx.position;
    if (dtx.norm() < 1e-9 || (kind == MappingKind::Bistatic && drx.norm() < 1e-9)) {
        out.degenerate = true;
        return out;
    }

    if (kind == MappingKind::Monostatic) {
        out.d_eta_d_state.block<1, 3>(4, 0) =
            2.0 * dtx.transpose() / (dtx.norm() * kSpeedOfLight);
    } else {
        out.d_eta_d_state.block<1, 3>(4, 0) =
            (dtx.normalized() + drx.normalized()).transpose() / kSpeedOfLight;
    }

    double pos_step = steps.position_m * std::max(1.0, dtx.norm());
    for (int j = 0; j < 3; ++j) {
        VecX col = detail::central_diff_geo(
            [&](double h) {
                ObjectState p = object;
                p.position(j) += h;
                return eval(p);
            },
            pos_step);
        for (int r : {0, 1, 2, 3, 5}) out.d_eta_d_state(r, j) = col(r);
    }
    double vel_step = steps.velocity_mps * std::max(1.0, object.velocity.norm());
    for (int j = 0; j < 3; ++j) {
        VecX col = detail::central_diff_geo(
            [&](double h) {
                ObjectState p = object;
                p.velocity(j) += h;
                return eval(p);
            },
            vel_step);
        out.d_eta_d_state(5, 3 + j) = col(5);  // velocity only enters Doppler
    }
    return out;
}

}  // namespace locsense
