// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "locsense/estimation.hpp"

using namespace locsense;

namespace {

struct SisoChain {
    GridConfig grid;
    TxRxConfig txrx;
    ArrayGeometry single = ArrayGeometry::single();

    explicit SisoChain(int n = 64, double n0 = 0.0, int k = 1)
        : grid(n, 120e3, k, 1.0 / 120e3, 3.5e9),
          txrx(TxRxConfig::siso(grid, grid.bandwidth(), n0)) {}  // |f| = 1

    ChannelEstimate estimate(const std::vector<PathParams>& paths, std::uint64_t seed) {
        Observation obs = observe(paths, grid, txrx, single, single, seed);
        return ls_channel_estimate(obs, grid, txrx);
    }
};

PathParams delay_path(double delay, cplx gain) {
    PathParams p;
    p.geo.delay = delay;
    p.gain = gain;
    p.tag = PathTag::Object;
    return p;
}

}  // namespace

TEST_CASE("siso ls estimate is exact without noise") {
    SisoChain chain(32);
    auto paths = {delay_path(300e-9, cplx(0.7, -0.4))};
    ChannelEstimate est = chain.estimate(paths, 1);
    for (int n = 0; n < 32; ++n) {
        CMatX h = channel_matrix(paths, chain.grid, chain.single, chain.single, n, 0);
        REQUIRE(std::abs(est.at(n, 0)(0, 0) - h(0, 0)) < 1e-14);
    }
    REQUIRE(est.noise_var == 0.0);
}

TEST_CASE("ls estimate is unbiased under noise") {
    SisoChain chain(16, 0.25);
    auto paths = {delay_path(200e-9, cplx(1.0, 0.5))};
    CVecX mean = CVecX::Zero(16);
    const int trials = 10000;
    for (int t = 0; t < trials; ++t) {
        ChannelEstimate est = chain.estimate(paths, 100 + std::uint64_t(t));
        for (int n = 0; n < 16; ++n) mean(n) += est.at(n, 0)(0, 0);
    }
    mean /= double(trials);
    double sigma = std::sqrt(0.25 / trials);  // per-entry std of the average
    for (int n = 0; n < 16; ++n) {
        CMatX h = channel_matrix(paths, chain.grid, chain.single, chain.single, n, 0);
        REQUIRE(std::abs(mean(n) - h(0, 0)) < 5.0 * sigma);
    }
}

TEST_CASE("full combiner schedule reconstructs the mimo channel to the noise level") {
    GridConfig grid(8, 120e3, 2, 1.0 / 120e3, 28e9);
    double n0 = 0.01;
    TxRxConfig txrx = TxRxConfig::full_rx(grid, 4, 1, grid.bandwidth(), n0);
    ArrayGeometry rx = ArrayGeometry::ula(4);
    ArrayGeometry tx = ArrayGeometry::single();
    PathParams p;
    p.geo.delay = 150e-9;
    p.geo.aoa = Vec2(0.5, 0.0);
    p.gain = cplx(0.9, 0.2);
    std::vector<PathParams> paths = {p};

    double err_acc = 0.0;
    std::size_t count = 0;
    for (int t = 0; t < 300; ++t) {
        Observation obs = observe(paths, grid, txrx, rx, tx, 500 + std::uint64_t(t));
        ChannelEstimate est = ls_channel_estimate(obs, grid, txrx);
        REQUIRE(est.noise_var == Catch::Approx(n0 / txrx.precoders[0].squaredNorm()));
        for (int n = 0; n < grid.n_subcarriers; ++n)
            for (int g = 0; g < est.n_groups; ++g) {
                CMatX h = channel_matrix(paths, grid, rx, tx, n, g);
                err_acc += (est.at(n, g) - h).squaredNorm();
                count += std::size_t(h.size());
            }
    }
    // reconstruction error is noise-limited: per-entry variance -> noise_var
    double n0_eff = n0 / txrx.precoders[0].squaredNorm();
    REQUIRE(err_acc / double(count) == Catch::Approx(n0_eff).epsilon(0.05));
}

TEST_CASE("tx sounding makes the per-group mimo ls identifiable") {
    GridConfig grid(4, 240e3, 4, 1.0 / 240e3, 28e9);
    TxRxConfig txrx = TxRxConfig::tx_sounding(grid, 2, 2, grid.bandwidth(), 0.0);
    ArrayGeometry rx = ArrayGeometry::ula(2);
    ArrayGeometry tx = ArrayGeometry::ula(2);
    PathParams p;
    p.geo.delay = 80e-9;
    p.geo.aoa = Vec2(0.3, 0.0);
    p.geo.aod = Vec2(-0.4, 0.0);
    p.gain = cplx(1.0, -1.0);
    std::vector<PathParams> paths = {p};
    Observation obs = observe(paths, grid, txrx, rx, tx, 3);
    ChannelEstimate est = ls_channel_estimate(obs, grid, txrx);
    REQUIRE(est.n_groups == 2);
    for (int n = 0; n < 4; ++n)
        for (int g = 0; g < 2; ++g) {
            CMatX h = channel_matrix(paths, grid, rx, tx, n, g * 2);
            REQUIRE((est.at(n, g) - h).cwiseAbs().maxCoeff() < 1e-12);
        }

    // a rank-deficient pattern (N_tx = 2 with no sounding) is rejected
    TxRxConfig bad = TxRxConfig::full_rx(grid, 2, 2, grid.bandwidth(), 0.0);
    Observation obs2 = observe(paths, grid, bad, rx, tx, 3);
    REQUIRE_THROWS_WITH(ls_channel_estimate(obs2, grid, bad),
                        Catch::Matchers::ContainsSubstring("rank-deficient"));
}

TEST_CASE("vectorize round trip and atom proportionality") {
    SisoChain chain(32, 0.0, 2);
    auto paths = {delay_path(400e-9, cplx(0.5, 0.5))};
    ChannelEstimate est = chain.estimate(paths, 1);
    CVecX h = vectorize(est);
    ChannelEstimate back = devectorize(h, est);
    for (int n = 0; n < 32; ++n)
        for (int g = 0; g < est.n_groups; ++g)
            REQUIRE(back.at(n, g) == est.at(n, g));

    // single on-grid path: h is proportional to the dictionary atom
    Dictionary dict = Dictionary::regular(est, 4.0);
    GeoParams eta;
    eta.delay = 400e-9;  // on the 4x grid for this N: step = 1/(4*W)
    CVecX atom = dict.atom(eta);
    cplx ratio = h(0) / atom(0);
    REQUIRE((h - ratio * atom).norm() < 1e-9 * h.norm());
}

TEST_CASE("atoms alias at a full delay period") {
    SisoChain chain(16);
    ChannelEstimate like = chain.estimate({}, 0);
    Dictionary dict = Dictionary::regular(like, 4.0);
    GeoParams a, b;
    a.delay = 123e-9;
    b.delay = 123e-9 + 1.0 / chain.grid.subcarrier_spacing;
    CVecX atom_a = dict.atom(a);
    CVecX atom_b = dict.atom(b);
    REQUIRE((atom_a - atom_b).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("undersampled dictionaries are rejected") {
    SisoChain chain(16);
    ChannelEstimate like = chain.estimate({}, 0);
    double w = chain.grid.bandwidth();
    VecX coarse(4);
    for (int i = 0; i < 4; ++i) coarse(i) = i * 1.0 / w;  // step = full limit
    REQUIRE_THROWS_WITH(
        Dictionary(like, coarse, VecX(), VecX(), VecX()),
        Catch::Matchers::ContainsSubstring("undersampled"));
    REQUIRE_THROWS_AS(Dictionary::regular(like, 1.0), std::invalid_argument);
}

TEST_CASE("omp finds a single on-grid path exactly") {
    SisoChain chain(64);
    ChannelEstimate like = chain.estimate({}, 0);
    Dictionary dict = Dictionary::regular(like, 4.0);
    double step = 1.0 / (4.0 * chain.grid.bandwidth());
    double tau = 40 * step;
    cplx gain(0.8, -0.3);
    ChannelEstimate est = chain.estimate({delay_path(tau, gain)}, 0);
    // noiseless run: supply the detection rule with a nominal noise level
    auto det = omp(vectorize(est), dict, 1e-12);
    REQUIRE(det.size() == 1);
    REQUIRE(det[0].eta.delay == Catch::Approx(tau).epsilon(1e-12));
    REQUIRE(std::abs(det[0].alpha - gain) < 1e-10);
    REQUIRE(det[0].flags.delay);
    REQUIRE_FALSE(det[0].flags.doppler);
}

TEST_CASE("omp residual norm never increases") {
    SisoChain chain(32, 0.05);
    ChannelEstimate like = chain.estimate({}, 0);
    Dictionary dict = Dictionary::regular(like, 4.0);
    std::vector<PathParams> paths = {delay_path(210e-9, cplx(1.0, 0.0)),
                                     delay_path(900e-9, cplx(0.0, 1.0)),
                                     delay_path(1800e-9, cplx(0.7, 0.7))};
    ChannelEstimate est = chain.estimate(paths, 77);
    CVecX h = vectorize(est);

    // replicate the greedy loop to observe the residual sequence
    std::vector<Eigen::Index> sel;
    CVecX residual = h;
    double prev = residual.squaredNorm();
    for (int it = 0; it < 6; ++it) {
        VecX corr = (dict.atoms().adjoint() * residual).cwiseAbs2();
        Eigen::Index best = 0;
        corr.maxCoeff(&best);
        if (std::find(sel.begin(), sel.end(), best) != sel.end()) break;
        sel.push_back(best);
        CMatX sub(h.size(), Eigen::Index(sel.size()));
        for (std::size_t s = 0; s < sel.size(); ++s) sub.col(Eigen::Index(s)) = dict.atoms().col(sel[s]);
        residual = h - sub * sub.colPivHouseholderQr().solve(h);
        double now = residual.squaredNorm();
        REQUIRE(now <= prev * (1.0 + 1e-12));
        prev = now;
    }
}

TEST_CASE("spatial frequency mapping and inverse") {
    GridConfig grid(32, 120e3, 4, 1.0 / 120e3, 28e9);
    ArrayGeometry rx = ArrayGeometry::ula(8);
    ArrayGeometry tx = ArrayGeometry::ula(2);
    DomainFlags flags;
    flags.delay = true;
    flags.doppler = true;
    flags.aoa_az = true;
    flags.aod_az = true;

    GeoParams eta;
    eta.delay = 0.0;
    SpatialFrequencies sf =
        spatial_frequencies(eta, grid, grid.symbol_duration, rx, tx, flags);
    REQUIRE(sf.omega[0] == 0.0);  // tau = 0 -> zero subcarrier frequency

    eta.delay = 1.0 / (2.0 * grid.subcarrier_spacing);  // edge of the range
    sf = spatial_frequencies(eta, grid, grid.symbol_duration, rx, tx, flags);
    REQUIRE(sf.omega[0] == Catch::Approx(-kPi).epsilon(1e-12));

    // round trip on a generic in-range parameter set
    eta.delay = 1.7e-6;
    eta.doppler = 800.0;
    eta.aoa = Vec2(0.6, 0.0);
    eta.aod = Vec2(-0.9, 0.0);
    sf = spatial_frequencies(eta, grid, grid.symbol_duration, rx, tx, flags);
    GeoParams back = physical_from_spatial(sf, grid, grid.symbol_duration, rx, tx);
    REQUIRE(back.delay == Catch::Approx(eta.delay).epsilon(1e-12));
    REQUIRE(back.doppler == Catch::Approx(eta.doppler).epsilon(1e-12));
    REQUIRE(back.aoa(0) == Catch::Approx(eta.aoa(0)).epsilon(1e-12));
    REQUIRE(back.aod(0) == Catch::Approx(eta.aod(0)).epsilon(1e-12));

    // non-uniform arrays are unsupported
    Eigen::Matrix3Xd bad = Eigen::Matrix3Xd::Zero(3, 3);
    bad(1, 1) = 0.5;
    bad(1, 2) = 1.7;
    REQUIRE_THROWS_AS(
        spatial_frequencies(eta, grid, grid.symbol_duration, ArrayGeometry(bad), tx, flags),
        std::invalid_argument);
}

TEST_CASE("periodogram peaks") {
    SisoChain chain(64);
    double w = chain.grid.bandwidth();

    // single path: global peak within one zero-padded bin of the truth
    double tau = 1.234e-6;
    ChannelEstimate est = chain.estimate({delay_path(tau, cplx(1.0, 0.0))}, 0);
    PeriodogramResult pg = periodogram(est, true, false, 4, 0.0);
    REQUIRE_FALSE(pg.peaks.empty());
    double bin = 1.0 / (4.0 * w);
    REQUIRE(std::abs(pg.peaks[0].eta.delay - tau) <= bin);

    // two paths at twice the resolution: two distinct peaks
    double sep = 2.0 / w;
    ChannelEstimate est2 = chain.estimate(
        {delay_path(tau, cplx(1.0, 0.0)), delay_path(tau + sep, cplx(1.0, 0.0))}, 0);
    PeriodogramResult pg2 = periodogram(est2, true, false, 4, 0.25 * pg.peaks[0].power);
    REQUIRE(pg2.peaks.size() >= 2);
    std::vector<double> top = {pg2.peaks[0].eta.delay, pg2.peaks[1].eta.delay};
    std::sort(top.begin(), top.end());
    REQUIRE(std::abs(top[0] - tau) <= 2.0 * bin);
    REQUIRE(std::abs(top[1] - (tau + sep)) <= 2.0 * bin);

    // half the resolution: merged into a single strong peak
    ChannelEstimate est3 = chain.estimate(
        {delay_path(tau, cplx(1.0, 0.0)), delay_path(tau + 0.5 / w, cplx(1.0, 0.0))}, 0);
    PeriodogramResult pg3 = periodogram(est3, true, false, 4, 0.0);
    REQUIRE(pg3.peaks.size() >= 1);
    double main_power = pg3.peaks[0].power;
    int strong = 0;
    for (const auto& p : pg3.peaks)
        if (p.power > 0.2 * main_power) ++strong;
    REQUIRE(strong == 1);
}

TEST_CASE("ml refinement is a no-op at a noiseless on-grid optimum") {
    SisoChain chain(64);
    ChannelEstimate like = chain.estimate({}, 0);
    Dictionary dict = Dictionary::regular(like, 4.0);
    double step = 1.0 / (4.0 * chain.grid.bandwidth());
    double tau = 52 * step;
    ChannelEstimate est = chain.estimate({delay_path(tau, cplx(1.0, 0.2))}, 0);
    CVecX h = vectorize(est);
    auto det = omp(h, dict, 1e-12);
    REQUIRE(det.size() == 1);
    auto refined = ml_refine(h, dict, det, 1e-12);
    REQUIRE(refined.size() == 1);
    REQUIRE(refined[0].eta.delay == Catch::Approx(tau).margin(1e-16));
    REQUIRE(refined[0].refined);
}

TEST_CASE("ml refinement reaches the delay bound for an off-grid path") {
    SisoChain chain(64, 0.0);
    double w = chain.grid.bandwidth();
    ChannelEstimate like = chain.estimate({}, 0);
    Dictionary dict = Dictionary::regular(like, 4.0);

    // off-grid delay, integrated SNR = N |alpha|^2 / noise_var >= 20 dB
    double tau = 1.0037e-6;
    double noise_var = 0.32;  // integrated SNR = 64 / 0.32 = 200 = 23 dB
    GridConfig grid = chain.grid;
    TxRxConfig txrx = TxRxConfig::siso(grid, grid.bandwidth(), noise_var);  // |f| = 1
    std::vector<PathParams> paths = {delay_path(tau, cplx(1.0, 0.0))};

    // bound for the same fixture (delay in meters)
    MultipathModelConfig mcfg{grid, txrx, chain.single, chain.single, {DomainFlags{}}};
    MeanModel model = multipath_observation_model(mcfg, paths);
    FisherInfo fim = fim_slepian_bangs(model, multipath_kappa(mcfg, paths),
                                       txrx.noise_psd, multipath_labels(mcfg), 1);
    double crb_m = crb(fim).scalar_bound;

    const int trials = 500;
    double acc = 0.0;
    int used = 0;
    for (int t = 0; t < trials; ++t) {
        Observation obs = observe(paths, grid, txrx, chain.single, chain.single,
                                  9000 + std::uint64_t(t));
        ChannelEstimate est = ls_channel_estimate(obs, grid, txrx);
        CVecX h = vectorize(est);
        auto det = omp(h, dict, est.noise_var);
        auto refined = ml_refine(h, dict, det, est.noise_var);
        if (refined.empty()) continue;
        double best = std::numeric_limits<double>::infinity();
        for (const auto& d : refined)
            best = std::min(best, std::abs(d.eta.delay - tau) * kSpeedOfLight);
        acc += best * best;
        ++used;
    }
    REQUIRE(used >= trials * 95 / 100);
    double rmse = std::sqrt(acc / used);
    REQUIRE(rmse <= 1.15 * crb_m);
    REQUIRE(rmse >= 0.8 * crb_m);  // sanity: not magically below the bound
}

TEST_CASE("refinement never lowers the likelihood at fixed support") {
    SisoChain chain(32, 0.2);
    ChannelEstimate like = chain.estimate({}, 0);
    Dictionary dict = Dictionary::regular(like, 4.0);
    std::vector<PathParams> paths = {delay_path(310e-9, cplx(1.0, 0.0)),
                                     delay_path(2.1e-6, cplx(0.0, 0.8))};
    RefineOptions fixed_support;
    fixed_support.prune_insignificant = false;
    for (int t = 0; t < 50; ++t) {
        ChannelEstimate est = chain.estimate(paths, 200 + std::uint64_t(t));
        CVecX h = vectorize(est);
        auto det = omp(h, dict, est.noise_var);
        if (det.empty()) continue;
        auto cost_of = [&](const std::vector<DetectedPath>& ds) {
            CVecX model = CVecX::Zero(h.size());
            for (const auto& d : ds) model += d.alpha * dict.atom(d.eta);
            return (h - model).squaredNorm();
        };
        auto refined = ml_refine(h, dict, det, est.noise_var, fixed_support);
        REQUIRE(cost_of(refined) <= cost_of(det) * (1.0 + 1e-9));
    }
}

TEST_CASE("pruning removes off-grid leakage atoms at high snr") {
    SisoChain chain(64);
    GridConfig grid = chain.grid;
    double noise_var = 2e-4;  // ~55 dB integrated SNR for |alpha| ~ 1
    TxRxConfig txrx = TxRxConfig::siso(grid, grid.bandwidth(), noise_var);
    ChannelEstimate like = chain.estimate({}, 0);
    Dictionary dict = Dictionary::regular(like, 4.0);
    double tau = 1.0137e-6;  // off-grid
    std::vector<PathParams> paths = {delay_path(tau, cplx(1.0, 0.3))};
    int spurious_trials = 0;
    for (int t = 0; t < 20; ++t) {
        Observation obs = observe(paths, grid, txrx, chain.single, chain.single,
                                  3000 + std::uint64_t(t));
        ChannelEstimate est = ls_channel_estimate(obs, grid, txrx);
        CVecX h = vectorize(est);
        auto det = omp(h, dict, est.noise_var);
        if (det.size() > 1) ++spurious_trials;  // greedy overfit happens here
        auto refined = ml_refine(h, dict, det, est.noise_var);
        REQUIRE(refined.size() == 1);
        REQUIRE(std::abs(refined[0].eta.delay - tau) * kSpeedOfLight < 0.05);
    }
    REQUIRE(spurious_trials > 0);  // pruning had real work to do
}

TEST_CASE("detection association fixture") {
    std::vector<PathParams> truth;
    for (int l = 0; l < 5; ++l) truth.push_back(delay_path(100e-9 * (l + 1), cplx(1, 0)));

    MatchGates gates;
    gates.delay_s = 20e-9;

    // perfect detections
    std::vector<DetectedPath> det(5);
    for (int l = 0; l < 5; ++l) {
        det[std::size_t(l)].eta.delay = 100e-9 * (l + 1) + 1e-9;
        det[std::size_t(l)].flags = DomainFlags{};
    }
    MatchResult all = match_detections(truth, det, gates);
    REQUIRE(all.matched.size() == 5);
    REQUIRE(all.missed.empty());
    REQUIRE(all.false_alarms.empty());

    // empty detection list: everything missed
    MatchResult none = match_detections(truth, {}, gates);
    REQUIRE(none.missed.size() == 5);

    // three in-gate detections for five truths: two missed, none false
    std::vector<DetectedPath> three(det.begin(), det.begin() + 3);
    MatchResult partial = match_detections(truth, three, gates);
    REQUIRE(partial.matched.size() == 3);
    REQUIRE(partial.missed.size() == 2);
    REQUIRE(partial.false_alarms.empty());

    // an out-of-gate detection becomes a false alarm
    std::vector<DetectedPath> off = three;
    off[0].eta.delay = 100e-9 + 50e-9;
    MatchResult fa = match_detections(truth, off, gates);
    REQUIRE(fa.false_alarms.size() == 1);
}
