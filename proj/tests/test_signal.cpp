// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "locsense/signal.hpp"

using namespace locsense;

namespace {

std::vector<PathParams> one_path(double delay, cplx gain) {
    PathParams p;
    p.geo.delay = delay;
    p.gain = gain;
    return {p};
}

}  // namespace

TEST_CASE("noiseless siso observation equals the channel") {
    GridConfig grid(16, 120e3, 2, 1.0 / 120e3, 28e9);
    TxRxConfig txrx = TxRxConfig::siso(grid, grid.bandwidth(), 0.0);  // unit pilot
    REQUIRE(std::abs(txrx.precoders.front()(0) - cplx(1.0, 0.0)) < 1e-15);
    ArrayGeometry single = ArrayGeometry::single();
    auto paths = one_path(250e-9, cplx(0.4, 0.6));
    Observation obs = observe(paths, grid, txrx, single, single, 99);
    for (int n = 0; n < 16; ++n)
        for (int k = 0; k < 2; ++k) {
            CMatX h = channel_matrix(paths, grid, single, single, n, k);
            REQUIRE(std::abs(obs.at(n, k)(0) - h(0, 0)) < 1e-15);
        }
}

TEST_CASE("pilot normalization carries P/W per vector") {
    GridConfig grid(32, 120e3, 4, 1.0 / 120e3, 28e9);
    double p_tx = 7.0;
    for (auto make : {+[](const GridConfig& g, double p) {
                          return TxRxConfig::siso(g, p, 1e-9);
                      },
                      +[](const GridConfig& g, double p) {
                          return TxRxConfig::full_rx(g, 4, 2, p, 1e-9);
                      },
                      +[](const GridConfig& g, double p) {
                          return TxRxConfig::tx_sounding(g, 1, 2, p, 1e-9);
                      }}) {
        TxRxConfig txrx = make(grid, p_tx);
        for (const auto& f : txrx.precoders)
            REQUIRE(f.squaredNorm() ==
                    Catch::Approx(p_tx / grid.bandwidth()).epsilon(1e-12));
    }
}

TEST_CASE("noise-only observations have the configured variance") {
    GridConfig grid(250, 120e3, 4, 1.0 / 120e3, 28e9);  // 1000 entries
    double n0 = 0.3;
    TxRxConfig txrx = TxRxConfig::siso(grid, 1.0, n0);
    ArrayGeometry single = ArrayGeometry::single();
    std::vector<PathParams> empty;  // zero channel
    double acc = 0.0;
    std::size_t count = 0;
    for (int s = 0; s < 100; ++s) {  // 1e5 entries total
        Observation obs = observe(empty, grid, txrx, single, single, 1000 + s);
        for (const auto& y : obs.y) {
            acc += y.squaredNorm();
            count += y.size();
        }
    }
    REQUIRE(acc / double(count) == Catch::Approx(n0).epsilon(0.03));
}

TEST_CASE("identical seeds give identical observations") {
    GridConfig grid(16, 120e3, 2, 1.0 / 120e3, 28e9);
    TxRxConfig txrx = TxRxConfig::siso(grid, 1.0, 1e-3);
    ArrayGeometry single = ArrayGeometry::single();
    auto paths = one_path(100e-9, cplx(1.0, 0.0));
    Observation a = observe(paths, grid, txrx, single, single, 7);
    Observation b = observe(paths, grid, txrx, single, single, 7);
    Observation c = observe(paths, grid, txrx, single, single, 8);
    bool same = true, diff = false;
    for (std::size_t i = 0; i < a.y.size(); ++i) {
        same = same && (a.y[i] == b.y[i]);
        diff = diff || (a.y[i] != c.y[i]);
    }
    REQUIRE(same);
    REQUIRE(diff);
}

TEST_CASE("observation is linear in the path set") {
    GridConfig grid(16, 120e3, 2, 1.0 / 120e3, 28e9);
    TxRxConfig txrx = TxRxConfig::siso(grid, 1.0, 0.0);
    ArrayGeometry single = ArrayGeometry::single();
    auto pa = one_path(100e-9, cplx(0.5, 0.1));
    auto pb = one_path(400e-9, cplx(-0.2, 0.7));
    std::vector<PathParams> both = {pa[0], pb[0]};
    Observation oa = observe(pa, grid, txrx, single, single, 1);
    Observation ob = observe(pb, grid, txrx, single, single, 1);
    Observation oboth = observe(both, grid, txrx, single, single, 1);
    for (std::size_t i = 0; i < oboth.y.size(); ++i)
        REQUIRE((oboth.y[i] - oa.y[i] - ob.y[i]).norm() < 1e-14);
}

TEST_CASE("non-orthonormal combiner is rejected") {
    GridConfig grid(4, 120e3, 1, 1.0 / 120e3, 28e9);
    TxRxConfig txrx = TxRxConfig::full_rx(grid, 2, 1, 1.0, 0.0);
    txrx.combiners[0](0, 0) = cplx(2.0, 0.0);
    ArrayGeometry rx = ArrayGeometry::ula(2);
    ArrayGeometry tx = ArrayGeometry::single();
    auto paths = one_path(0.0, cplx(1.0, 0.0));
    REQUIRE_THROWS_AS(observe(paths, grid, txrx, rx, tx, 1), std::invalid_argument);
}

TEST_CASE("random combiner schedules are orthonormal and seeded") {
    GridConfig grid(4, 120e3, 6, 1.0 / 120e3, 28e9);
    TxRxConfig a = TxRxConfig::random_combining(grid, 8, 2, 1, 1.0, 1e-9, 5);
    TxRxConfig b = TxRxConfig::random_combining(grid, 8, 2, 1, 1.0, 1e-9, 5);
    a.validate();
    REQUIRE(a.combiners.size() == 6);
    for (std::size_t k = 0; k < a.combiners.size(); ++k)
        REQUIRE((a.combiners[k] - b.combiners[k]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("combined noise stays white") {
    GridConfig grid(50, 120e3, 2, 1.0 / 120e3, 28e9);
    double n0 = 0.1;
    TxRxConfig txrx = TxRxConfig::random_combining(grid, 4, 2, 1, 1.0, n0, 3);
    ArrayGeometry rx = ArrayGeometry::ula(4);
    ArrayGeometry tx = ArrayGeometry::single();
    std::vector<PathParams> empty;
    CMatX acc = CMatX::Zero(2, 2);
    std::size_t count = 0;
    for (int s = 0; s < 400; ++s) {
        Observation obs = observe(empty, grid, txrx, rx, tx, 50 + s);
        for (const auto& y : obs.y) {
            acc += y * y.adjoint();
            ++count;
        }
    }
    acc /= double(count);
    REQUIRE(std::abs(acc(0, 0).real() - n0) < 0.05 * n0);
    REQUIRE(std::abs(acc(1, 1).real() - n0) < 0.05 * n0);
    REQUIRE(std::abs(acc(0, 1)) < 0.05 * n0);
}

TEST_CASE("integrated snr bookkeeping") {
    // SISO, unit gain, N*K = 100, 0 dB per sample -> 20 dB integrated
    GridConfig grid(25, 120e3, 4, 1.0 / 120e3, 28e9);
    TxRxConfig txrx = TxRxConfig::siso(grid, grid.bandwidth(), 1.0);  // |f| = 1, N0 = 1
    PathParams p;
    p.gain = cplx(1.0, 0.0);
    ArrayGeometry single = ArrayGeometry::single();
    double snr = integrated_snr_db(p, grid, txrx, single, single);
    REQUIRE(snr == Catch::Approx(20.0).margin(1e-9));

    // doubling K adds 3.01 dB at fixed per-symbol power
    GridConfig grid2(25, 120e3, 8, 1.0 / 120e3, 28e9);
    TxRxConfig txrx2 = TxRxConfig::siso(grid2, grid2.bandwidth(), 1.0);
    double snr2 = integrated_snr_db(p, grid2, txrx2, single, single);
    REQUIRE(snr2 - snr == Catch::Approx(10.0 * std::log10(2.0)).margin(1e-9));

    // doubling the noise psd subtracts 3.01 dB
    TxRxConfig txrx3 = TxRxConfig::siso(grid, grid.bandwidth(), 2.0);
    double snr3 = integrated_snr_db(p, grid, txrx3, single, single);
    REQUIRE(snr - snr3 == Catch::Approx(10.0 * std::log10(2.0)).margin(1e-9));
}

TEST_CASE("observation snapshots round-trip through the binary layout") {
    GridConfig grid(6, 120e3, 3, 1.0 / 120e3, 28e9);
    TxRxConfig txrx = TxRxConfig::full_rx(grid, 2, 1, 1.0, 1e-2);
    ArrayGeometry rx = ArrayGeometry::ula(2);
    ArrayGeometry tx = ArrayGeometry::single();
    auto paths = one_path(120e-9, cplx(0.8, -0.3));
    Observation obs = observe(paths, grid, txrx, rx, tx, 11);

    auto path = std::filesystem::temp_directory_path() / "locsense_obs_test.bin";
    save_observation(obs, path);
    Observation back = load_observation(path);
    std::filesystem::remove(path);

    REQUIRE(back.n_subcarriers == obs.n_subcarriers);
    REQUIRE(back.n_symbols == obs.n_symbols);
    REQUIRE(back.m_rx == obs.m_rx);
    for (std::size_t i = 0; i < obs.y.size(); ++i) REQUIRE(back.y[i] == obs.y[i]);
}
