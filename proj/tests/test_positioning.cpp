// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "locsense/estimation.hpp"
#include "locsense/positioning.hpp"

using namespace locsense;

namespace {

PositioningProblem tetrahedron_problem() {
    PositioningProblem prob;
    std::vector<Vec3> pos = {Vec3(0, 0, 0), Vec3(40, 0, 0), Vec3(20, 35, 0),
                             Vec3(20, 12, 30)};
    for (int i = 0; i < 4; ++i) {
        AnchorState a;
        a.id = i;
        a.position = pos[std::size_t(i)];
        prob.anchors.push_back(a);
    }
    prob.estimate_bias = true;
    prob.bounds_min = Vec3(-10, -10, -10);
    prob.bounds_max = Vec3(50, 45, 40);
    return prob;
}

std::vector<Measurement> toa_measurements(const PositioningProblem& prob,
                                          const UEState& truth, double sigma_s,
                                          std::mt19937_64* rng = nullptr) {
    std::normal_distribution<double> gauss(0.0, sigma_s);
    std::vector<Measurement> ms;
    for (const auto& a : prob.anchors) {
        Measurement m;
        m.anchor_id = a.id;
        m.flags = DomainFlags{};  // delay only
        m.eta = los_params(a, truth, prob.link, prob.carrier_hz);
        if (rng) m.eta.delay += gauss(*rng);
        double var = sigma_s > 0.0 ? sigma_s * sigma_s : 1e-18;
        m.covariance = MatX::Constant(1, 1, var);
        ms.push_back(std::move(m));
    }
    return ms;
}

UEState truth_state() {
    UEState s;
    s.position = Vec3(11.0, 14.0, 7.0);
    s.clock_bias = 50e-9;
    return s;
}

}  // namespace

TEST_CASE("wnls cost is zero at the truth and positive elsewhere") {
    PositioningProblem prob = tetrahedron_problem();
    UEState truth = truth_state();
    auto ms = toa_measurements(prob, truth, 0.0);
    REQUIRE(wnls_cost(truth, ms, prob) == Catch::Approx(0.0).margin(1e-16));
    UEState off = truth;
    off.position(0) += 0.5;
    REQUIRE(wnls_cost(off, ms, prob) > 0.0);
}

TEST_CASE("wnls unit bookkeeping for a 1 ns residual") {
    PositioningProblem prob;
    AnchorState a;
    a.id = 0;
    prob.anchors.push_back(a);
    prob.estimate_bias = false;
    UEState s;
    s.position = Vec3(10, 0, 0);
    Measurement m;
    m.anchor_id = 0;
    m.flags = DomainFlags{};
    m.eta = los_params(a, s, prob.link, prob.carrier_hz);
    m.eta.delay += 1e-9;  // 1 ns residual
    m.covariance = MatX::Identity(1, 1);  // identity weight, s^2 units
    // cost = (1e-9)^2 / 1 = 1e-18 (the residual scaling cancels)
    REQUIRE(wnls_cost(s, {m}, prob) == Catch::Approx(1e-18).epsilon(1e-9));
}

TEST_CASE("wnls is invariant to consistent rescaling of the covariance") {
    PositioningProblem prob = tetrahedron_problem();
    UEState truth = truth_state();
    std::mt19937_64 rng(5);
    auto ms = toa_measurements(prob, truth, 2e-9, &rng);
    UEState query = truth;
    query.position += Vec3(0.4, -0.2, 0.1);
    double c1 = wnls_cost(query, ms, prob);
    // whitening consistency: scaling covariance by k scales cost by 1/k
    for (auto& m : ms) m.covariance *= 4.0;
    double c2 = wnls_cost(query, ms, prob);
    REQUIRE(c2 == Catch::Approx(c1 / 4.0).epsilon(1e-12));
}

TEST_CASE("singular measurement covariance falls back to the pseudo-inverse") {
    PositioningProblem prob = tetrahedron_problem();
    UEState truth = truth_state();
    auto ms = toa_measurements(prob, truth, 0.0);
    ms[0].covariance = MatX::Zero(1, 1);
    bool singular = false;
    double c = wnls_cost(truth, ms, prob, &singular);
    REQUIRE(singular);
    REQUIRE(std::isfinite(c));
}

TEST_CASE("coarse init recovers the state from four pseudoranges") {
    PositioningProblem prob = tetrahedron_problem();
    UEState truth = truth_state();
    auto ms = toa_measurements(prob, truth, 0.0);
    UEState init = coarse_init(ms, prob);
    REQUIRE((init.position - truth.position).norm() < 1e-9);
    REQUIRE(init.clock_bias == Catch::Approx(truth.clock_bias).margin(1e-17));
}

TEST_CASE("single toa with unknown bias is rejected with an explanation") {
    PositioningProblem prob = tetrahedron_problem();
    prob.anchors.resize(1);
    UEState truth = truth_state();
    auto ms = toa_measurements(prob, truth, 0.0);
    REQUIRE_THROWS_AS(coarse_init(ms, prob), NonIdentifiableError);
    try {
        coarse_init(ms, prob);
    } catch (const NonIdentifiableError& e) {
        REQUIRE(std::string(e.what()).find("ToA") != std::string::npos);
    }
}

TEST_CASE("bearing-only intersection in the plane") {
    PositioningProblem prob;
    prob.planar = true;
    prob.fixed_z = 0.0;
    prob.estimate_bias = false;
    AnchorState a0, a1;
    a0.id = 0;
    a0.position = Vec3(0, 0, 0);
    a1.id = 1;
    a1.position = Vec3(30, 0, 0);
    prob.anchors = {a0, a1};
    UEState truth;
    truth.position = Vec3(12.0, 9.0, 0.0);

    std::vector<Measurement> ms;
    for (const auto& a : prob.anchors) {
        Measurement m;
        m.anchor_id = a.id;
        m.flags.delay = false;
        m.flags.aod_az = true;  // bearing from the anchor toward the UE
        m.eta = los_params(a, truth, prob.link, prob.carrier_hz);
        m.covariance = MatX::Identity(1, 1) * 1e-6;
        ms.push_back(std::move(m));
    }
    UEState init = coarse_init(ms, prob);
    REQUIRE((init.position - truth.position).norm() < 1e-9);
}

TEST_CASE("single anchor with bearing and range, bias known") {
    PositioningProblem prob;
    prob.estimate_bias = false;
    AnchorState a;
    a.id = 0;
    a.position = Vec3(2.0, -1.0, 4.0);
    a.orientation = Rotation::from_yaw_pitch_roll(0.7, 0.1, -0.2);
    prob.anchors = {a};
    UEState truth;
    truth.position = Vec3(15.0, 6.0, 1.0);

    Measurement m;
    m.anchor_id = 0;
    m.flags.delay = true;
    m.flags.aod_az = true;
    m.flags.aod_el = true;
    m.eta = los_params(a, truth, prob.link, prob.carrier_hz);
    // covariance rows follow the active domains: aod_az, aod_el, delay
    m.covariance = MatX::Identity(3, 3) * 1e-9;
    UEState init = coarse_init({m}, prob);
    REQUIRE((init.position - truth.position).norm() < 1e-9);
}

TEST_CASE("gauss-newton converges to the truth without noise") {
    PositioningProblem prob = tetrahedron_problem();
    UEState truth = truth_state();
    auto ms = toa_measurements(prob, truth, 0.0);
    for (auto& m : ms) m.covariance = MatX::Constant(1, 1, 1e-18);
    UEState init = coarse_init(ms, prob);
    init.position += Vec3(0.5, -0.3, 0.4);  // nudge off the exact solve
    StateEstimate est = gauss_newton_refine(init, ms, prob);
    REQUIRE(est.converged);
    REQUIRE(est.iterations <= 10);
    REQUIRE((est.state.position - truth.position).norm() < 1e-9);
    REQUIRE(est.cost == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("nees consistency over noisy trials") {
    PositioningProblem prob = tetrahedron_problem();
    UEState truth = truth_state();
    double sigma_s = 0.3 / kSpeedOfLight;  // 30 cm ranging noise
    std::mt19937_64 rng(99);
    const int trials = 1000;
    double nees_acc = 0.0;
    int used = 0;
    for (int t = 0; t < trials; ++t) {
        auto ms = toa_measurements(prob, truth, sigma_s, &rng);
        UEState init = coarse_init(ms, prob);
        StateEstimate est = gauss_newton_refine(init, ms, prob);
        VecX err(4);
        err.head(3) = est.state.position - truth.position;
        err(3) = est.state.clock_bias - truth.clock_bias;
        MatX cov = est.covariance;
        Eigen::LDLT<MatX> ldlt(cov);
        if (ldlt.info() != Eigen::Success) continue;
        nees_acc += err.dot(ldlt.solve(err));
        ++used;
    }
    REQUIRE(used > trials * 99 / 100);
    double mean_nees = nees_acc / used;
    REQUIRE(mean_nees == Catch::Approx(4.0).epsilon(0.10));
}

TEST_CASE("rmse attains the position bound at high snr") {
    PositioningProblem prob = tetrahedron_problem();
    UEState truth = truth_state();
    double sigma_s = 0.05 / kSpeedOfLight;

    // position bound from the information form at the truth
    MatX h = MatX::Zero(4, 4);
    for (const auto& a : prob.anchors) {
        Measurement m;
        m.anchor_id = a.id;
        m.flags = DomainFlags{};
        m.eta = los_params(a, truth, prob.link, prob.carrier_hz);
        m.covariance = MatX::Constant(1, 1, sigma_s * sigma_s);
        MatX j = detail::measurement_jacobian(prob, truth, m);
        MatX cov = detail::scaled_covariance(m);
        h += j.transpose() * cov.inverse() * j;
    }
    MatX cov_state = h.inverse();
    double peb = std::sqrt(cov_state.topLeftCorner(3, 3).trace());

    std::mt19937_64 rng(123);
    const int trials = 500;
    double acc = 0.0;
    for (int t = 0; t < trials; ++t) {
        auto ms = toa_measurements(prob, truth, sigma_s, &rng);
        UEState init = coarse_init(ms, prob);
        StateEstimate est = gauss_newton_refine(init, ms, prob);
        acc += (est.state.position - truth.position).squaredNorm();
    }
    double rmse = std::sqrt(acc / trials);
    REQUIRE(rmse <= 1.1 * peb);
    REQUIRE(rmse >= 0.8 * peb);
}

TEST_CASE("translation equivariance") {
    PositioningProblem prob = tetrahedron_problem();
    UEState truth = truth_state();
    std::mt19937_64 rng(7);
    auto ms = toa_measurements(prob, truth, 1e-9, &rng);
    UEState est1 = gauss_newton_refine(coarse_init(ms, prob), ms, prob).state;

    Vec3 shift(13.0, -4.0, 2.0);
    PositioningProblem moved = prob;
    for (auto& a : moved.anchors) a.position += shift;
    moved.bounds_min += shift;
    moved.bounds_max += shift;
    UEState est2 = gauss_newton_refine(coarse_init(ms, moved), ms, moved).state;
    REQUIRE((est2.position - est1.position - shift).norm() < 1e-6);
    REQUIRE(est2.clock_bias == Catch::Approx(est1.clock_bias).margin(1e-15));
}

TEST_CASE("an added measurement never increases the covariance trace") {
    PositioningProblem prob = tetrahedron_problem();
    AnchorState extra;
    extra.id = 4;
    extra.position = Vec3(5.0, 30.0, 25.0);
    UEState truth = truth_state();
    double sigma_s = 1e-9;

    // information form evaluated at the same state
    auto info = [&](const std::vector<Measurement>& ms) {
        MatX h = MatX::Zero(4, 4);
        for (const auto& m : ms) {
            MatX j = detail::measurement_jacobian(prob, truth, m);
            MatX cov = detail::scaled_covariance(m);
            h += j.transpose() * cov.inverse() * j;
        }
        return MatX(h.inverse());
    };
    auto ms = toa_measurements(prob, truth, 0.0);
    for (auto& m : ms) m.covariance = MatX::Constant(1, 1, sigma_s * sigma_s);
    double before = info(ms).trace();
    Measurement m5;
    m5.anchor_id = 4;
    m5.flags = DomainFlags{};
    prob.anchors.push_back(extra);
    m5.eta = los_params(extra, truth, prob.link, prob.carrier_hz);
    m5.covariance = MatX::Constant(1, 1, sigma_s * sigma_s);
    ms.push_back(m5);
    double after = info(ms).trace();
    REQUIRE(after <= before * (1.0 + 1e-12));
}

TEST_CASE("azimuth wrap invariance of the cost") {
    PositioningProblem prob;
    prob.estimate_bias = false;
    AnchorState a;
    a.id = 0;
    prob.anchors = {a};
    UEState truth;
    truth.position = Vec3(-20.0, -0.1, 0.0);  // azimuth near the pi seam

    Measurement m;
    m.anchor_id = 0;
    m.flags.delay = false;
    m.flags.aod_az = true;
    m.eta = los_params(a, truth, prob.link, prob.carrier_hz);
    m.covariance = MatX::Identity(1, 1) * 1e-6;

    Measurement wrapped = m;
    wrapped.eta.aod(0) += 2.0 * kPi;
    UEState query = truth;
    query.position += Vec3(0.3, 0.2, 0.0);
    REQUIRE(wnls_cost(query, {m}, prob) ==
            Catch::Approx(wnls_cost(query, {wrapped}, prob)).epsilon(1e-12));
}

TEST_CASE("direct grid oracle and two-stage agreement") {
    // 3-anchor planar fixture, bias known (zero), SISO delay observations
    GridConfig grid(64, 240e3, 1, 1.0 / 240e3, 3.5e9);
    double n0 = 2e-4;  // high integrated SNR
    TxRxConfig txrx = TxRxConfig::siso(grid, grid.bandwidth(), n0);
    ArrayGeometry single = ArrayGeometry::single();

    Scene scene;
    std::vector<Vec3> pos = {Vec3(0, 0, 0), Vec3(60, 0, 0), Vec3(25, 55, 0)};
    for (int i = 0; i < 3; ++i) {
        AnchorState a;
        a.id = i;
        a.position = pos[std::size_t(i)];
        scene.anchors.push_back(a);
    }
    scene.ue.position = Vec3(22.0, 18.0, 0.0);

    PositioningProblem prob;
    prob.anchors = scene.anchors;
    prob.carrier_hz = grid.carrier;
    prob.estimate_bias = false;
    prob.planar = true;
    prob.fixed_z = 0.0;

    DirectGridSpec spec;
    spec.min_corner = Vec3(14.0, 10.0, 0.0);
    spec.max_corner = Vec3(30.0, 26.0, 0.0);
    spec.shape = {65, 65, 1};  // 0.25 m cells
    double cell = 0.25;

    // noiseless: the grid point nearest the truth wins
    {
        std::vector<Observation> per_anchor;
        for (int i = 0; i < 3; ++i) {
            PathParams p;
            p.geo = los_params(scene.anchors[std::size_t(i)], scene.ue, scene.link,
                               grid.carrier);
            p.gain = cplx(1.0, 0.3);
            TxRxConfig clean = txrx;
            clean.noise_psd = 0.0;
            per_anchor.push_back(observe({p}, grid, clean, single, single, 0));
        }
        DirectGridResult res = direct_position_grid(per_anchor, scene, grid, txrx, single,
                                                    single, spec);
        REQUIRE_FALSE(res.on_boundary);
        REQUIRE((res.state.position - scene.ue.position).cwiseAbs().maxCoeff() <=
                cell / 2.0 + 1e-12);
    }

    ChannelEstimate like;
    {
        std::vector<PathParams> none;
        like = ls_channel_estimate(observe(none, grid, txrx, single, single, 0), grid,
                                   txrx);
    }
    Dictionary dict = Dictionary::regular(like, 4.0);

    int agree = 0;
    const int trials = 50;
    for (int t = 0; t < trials; ++t) {
        std::vector<Observation> per_anchor;
        std::vector<Measurement> ms;
        for (int i = 0; i < 3; ++i) {
            PathParams p;
            p.geo = los_params(scene.anchors[std::size_t(i)], scene.ue, scene.link,
                               grid.carrier);
            p.gain = cplx(1.0, 0.3);
            Observation obs = observe({p}, grid, txrx, single, single,
                                      derive_seed(4242, std::size_t(t), std::size_t(i)));
            per_anchor.push_back(obs);

            // stage 1: delay estimation on this anchor's observation
            ChannelEstimate est = ls_channel_estimate(obs, grid, txrx);
            CVecX h = vectorize(est);
            auto det = ml_refine(h, dict, omp(h, dict, est.noise_var), est.noise_var);
            REQUIRE_FALSE(det.empty());
            // smallest-delay detection is the LoS candidate
            const DetectedPath* best = &det.front();
            for (const auto& d : det)
                if (d.eta.delay < best->eta.delay) best = &d;
            Measurement m;
            m.anchor_id = i;
            m.flags = DomainFlags{};
            m.eta = best->eta;
            m.covariance = best->covariance.size() > 0
                               ? best->covariance
                               : MatX::Constant(1, 1, 1e-18);
            ms.push_back(std::move(m));
        }
        StateEstimate two_stage = gauss_newton_refine(coarse_init(ms, prob), ms, prob);
        DirectGridResult direct = direct_position_grid(per_anchor, scene, grid, txrx,
                                                       single, single, spec);
        double dist =
            (two_stage.state.position - direct.state.position).cwiseAbs().maxCoeff();
        if (dist <= cell + 1e-9) ++agree;

        // the wnls surface over the same grid peaks in the same cell
        if (t == 0) {
            double best_cost = std::numeric_limits<double>::infinity();
            Vec3 best_xy = Vec3::Zero();
            for (int ix = 0; ix < spec.shape[0]; ++ix)
                for (int iy = 0; iy < spec.shape[1]; ++iy) {
                    UEState cand;
                    cand.position =
                        Vec3(spec.min_corner(0) + cell * ix,
                             spec.min_corner(1) + cell * iy, 0.0);
                    double c = wnls_cost(cand, ms, prob);
                    if (c < best_cost) {
                        best_cost = c;
                        best_xy = cand.position;
                    }
                }
            REQUIRE((best_xy - direct.state.position).cwiseAbs().maxCoeff() <=
                    cell + 1e-9);
        }
    }
    REQUIRE(agree == trials);
}
