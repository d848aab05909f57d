// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "locsense/channel.hpp"
#include "locsense/core.hpp"

namespace locsense {

// ---------------------------------------------------------------------------
// Transmit / receive processing configuration
// ---------------------------------------------------------------------------

/// Precoders, combiners, transmit power and noise level.
///
/// Precoders are indexed (n, k) -> precoder(k * N + n) and normalized to
/// ||f||^2 = P_tx / W each. Combiners W_k are orthonormal (W^H W = I).
/// `group_size` declares a Tx sounding schedule: precoders cycle with
/// period group_size along k and the channel is treated as constant within
/// a group, which makes the per-group LS channel estimate identifiable
/// when N_tx > 1.
struct TxRxConfig {
    std::vector<CVecX> precoders;   // size N*K, each N_tx
    std::vector<CMatX> combiners;   // size K, each N_rx x M_rx
    double tx_power = 1.0;          // P_tx [W]
    double noise_psd = 0.0;         // N0 [W/Hz]
    int group_size = 1;

    int n_tx() const { return precoders.empty() ? 0 : int(precoders.front().size()); }
    int n_rx() const { return combiners.empty() ? 0 : int(combiners.front().rows()); }
    int m_rx() const { return combiners.empty() ? 0 : int(combiners.front().cols()); }

    const CVecX& precoder(int n, int k, int n_subcarriers) const {
        return precoders[std::size_t(k) * n_subcarriers + n];
    }

    /// Single-antenna link with a constant real pilot of power P_tx / W.
    static TxRxConfig siso(const GridConfig& grid, double tx_power_w, double noise_psd_w) {
        TxRxConfig c;
        c.tx_power = tx_power_w;
        c.noise_psd = noise_psd_w;
        double amp = std::sqrt(tx_power_w / grid.bandwidth());
        c.precoders.assign(std::size_t(grid.n_subcarriers) * grid.n_symbols,
                           CVecX::Constant(1, cplx(amp, 0.0)));
        c.combiners.assign(grid.n_symbols, CMatX::Identity(1, 1));
        return c;
    }

    /// Identity combiner over all Rx elements (M_rx = N_rx), constant
    /// equal-split unit-modulus precoder. Suitable for AoA estimation.
    static TxRxConfig full_rx(const GridConfig& grid, int n_rx, int n_tx,
                              double tx_power_w, double noise_psd_w) {
        TxRxConfig c;
        c.tx_power = tx_power_w;
        c.noise_psd = noise_psd_w;
        double amp = std::sqrt(tx_power_w / grid.bandwidth() / n_tx);
        c.precoders.assign(std::size_t(grid.n_subcarriers) * grid.n_symbols,
                           CVecX::Constant(n_tx, cplx(amp, 0.0)));
        c.combiners.assign(grid.n_symbols, CMatX::Identity(n_rx, n_rx));
        return c;
    }

    /// Tx-side sounding: precoders cycle through the N_tx canonical basis
    /// directions along k (group_size = N_tx), identity Rx combiner.
    /// Lets the LS stage identify the full N_rx x N_tx channel per group.
    static TxRxConfig tx_sounding(const GridConfig& grid, int n_rx, int n_tx,
                                  double tx_power_w, double noise_psd_w) {
        if (grid.n_symbols % n_tx != 0)
            throw std::invalid_argument("n_symbols must be a multiple of n_tx for sounding");
        TxRxConfig c;
        c.tx_power = tx_power_w;
        c.noise_psd = noise_psd_w;
        c.group_size = n_tx;
        double amp = std::sqrt(tx_power_w / grid.bandwidth());
        c.precoders.reserve(std::size_t(grid.n_subcarriers) * grid.n_symbols);
        for (int k = 0; k < grid.n_symbols; ++k) {
            CVecX f = CVecX::Zero(n_tx);
            f(k % n_tx) = cplx(amp, 0.0);
            for (int n = 0; n < grid.n_subcarriers; ++n) c.precoders.push_back(f);
        }
        c.combiners.assign(grid.n_symbols, CMatX::Identity(n_rx, n_rx));
        return c;
    }

    /// Randomized orthonormal combiner schedule (QR of a seeded complex
    /// Gaussian matrix per symbol) for angle coverage with M_rx < N_rx.
    static TxRxConfig random_combining(const GridConfig& grid, int n_rx, int m_rx,
                                       int n_tx, double tx_power_w, double noise_psd_w,
                                       std::uint64_t seed) {
        TxRxConfig c;
        c.tx_power = tx_power_w;
        c.noise_psd = noise_psd_w;
        double amp = std::sqrt(tx_power_w / grid.bandwidth() / n_tx);
        c.precoders.assign(std::size_t(grid.n_subcarriers) * grid.n_symbols,
                           CVecX::Constant(n_tx, cplx(amp, 0.0)));
        std::mt19937_64 rng(mix_seed(seed));
        std::normal_distribution<double> gauss(0.0, 1.0);
        c.combiners.reserve(grid.n_symbols);
        for (int k = 0; k < grid.n_symbols; ++k) {
            CMatX g(n_rx, m_rx);
            for (int i = 0; i < n_rx; ++i)
                for (int j = 0; j < m_rx; ++j) g(i, j) = cplx(gauss(rng), gauss(rng));
            Eigen::HouseholderQR<CMatX> qr(g);
            CMatX q = qr.householderQ() * CMatX::Identity(n_rx, m_rx);
            c.combiners.push_back(std::move(q));
        }
        return c;
    }

    /// Checks the orthonormal-combiner contract to 1e-10 per entry.
    void validate() const {
        if (precoders.empty() || combiners.empty())
            throw std::invalid_argument("TxRxConfig is empty");
        for (const auto& w : combiners) {
            CMatX err = w.adjoint() * w - CMatX::Identity(w.cols(), w.cols());
            if (err.cwiseAbs().maxCoeff() > 1e-10)
                throw std::invalid_argument("combiner is not orthonormal");
        }
    }
};

// ---------------------------------------------------------------------------
// Observations
// ---------------------------------------------------------------------------

/// Received pilot observations y_{n,k}, each an M_rx vector, stored at
/// index k * N + n.
struct Observation {
    std::vector<CVecX> y;
    int n_subcarriers = 0;
    int n_symbols = 0;
    int m_rx = 0;

    const CVecX& at(int n, int k) const { return y[std::size_t(k) * n_subcarriers + n]; }
    CVecX& at(int n, int k) { return y[std::size_t(k) * n_subcarriers + n]; }
};

/// Synthesizes y_{n,k} = W_k^H H_{n,k} f_{n,k} + noise, with the noise
/// drawn i.i.d. circularly-symmetric complex Gaussian of per-entry
/// variance N0 (noise enters after the combiner, so the combiner never
/// colors it). Identical seeds give identical observations.
inline Observation observe(const std::vector<PathParams>& paths, const GridConfig& grid,
                           const TxRxConfig& txrx, const ArrayGeometry& rx_array,
                           const ArrayGeometry& tx_array, std::uint64_t seed) {
    txrx.validate();
    Observation obs;
    obs.n_subcarriers = grid.n_subcarriers;
    obs.n_symbols = grid.n_symbols;
    obs.m_rx = txrx.m_rx();
    obs.y.resize(std::size_t(grid.n_subcarriers) * grid.n_symbols);

    std::mt19937_64 rng(mix_seed(seed));
    std::normal_distribution<double> gauss(0.0, std::sqrt(txrx.noise_psd / 2.0));

    for (int k = 0; k < grid.n_symbols; ++k) {
        const CMatX& w = txrx.combiners[k];
        for (int n = 0; n < grid.n_subcarriers; ++n) {
            CMatX h = channel_matrix(paths, grid, rx_array, tx_array, n, k);
            CVecX v = w.adjoint() * h * txrx.precoder(n, k, grid.n_subcarriers);
            if (txrx.noise_psd > 0.0)
                for (Eigen::Index m = 0; m < v.size(); ++m)
                    v(m) += cplx(gauss(rng), gauss(rng));
            obs.at(n, k) = std::move(v);
        }
    }
    return obs;
}

/// Coherently-integrable energy of a single path across the whole grid,
/// divided by the per-entry noise variance after combining. This is the
/// quantity the sweep calibration pins down. Returned in dB.
inline double integrated_snr_db(const PathParams& path, const GridConfig& grid,
                                const TxRxConfig& txrx, const ArrayGeometry& rx_array,
                                const ArrayGeometry& tx_array) {
    if (txrx.noise_psd <= 0.0)
        throw std::invalid_argument("integrated_snr_db: noise psd must be positive");
    std::vector<PathParams> one = {path};
    double energy = 0.0;
    for (int k = 0; k < grid.n_symbols; ++k)
        for (int n = 0; n < grid.n_subcarriers; ++n) {
            CMatX h = channel_matrix(one, grid, rx_array, tx_array, n, k);
            energy += (txrx.combiners[k].adjoint() * h *
                       txrx.precoder(n, k, grid.n_subcarriers))
                          .squaredNorm();
        }
    return linear_to_db(energy / txrx.noise_psd);
}

// ---------------------------------------------------------------------------
// Observation snapshot serialization
// ---------------------------------------------------------------------------
//
// Little-endian binary layout:
//   uint32 N, uint32 K, uint32 M_rx
//   then for k in [0,K), n in [0,N), m in [0,M_rx):
//     float64 Re(y), float64 Im(y)

static_assert(std::endian::native == std::endian::little,
              "observation snapshots assume a little-endian host");

inline void save_observation(const Observation& obs, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
    std::uint32_t hdr[3] = {std::uint32_t(obs.n_subcarriers), std::uint32_t(obs.n_symbols),
                            std::uint32_t(obs.m_rx)};
    f.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
    for (int k = 0; k < obs.n_symbols; ++k)
        for (int n = 0; n < obs.n_subcarriers; ++n)
            for (int m = 0; m < obs.m_rx; ++m) {
                double re = obs.at(n, k)(m).real(), im = obs.at(n, k)(m).imag();
                f.write(reinterpret_cast<const char*>(&re), sizeof(double));
                f.write(reinterpret_cast<const char*>(&im), sizeof(double));
            }
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

inline Observation load_observation(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for reading: " + path.string());
    std::uint32_t hdr[3];
    f.read(reinterpret_cast<char*>(hdr), sizeof(hdr));
    if (!f) throw std::runtime_error("truncated observation snapshot: " + path.string());
    Observation obs;
    obs.n_subcarriers = int(hdr[0]);
    obs.n_symbols = int(hdr[1]);
    obs.m_rx = int(hdr[2]);
    obs.y.assign(std::size_t(obs.n_subcarriers) * obs.n_symbols, CVecX(obs.m_rx));
    for (int k = 0; k < obs.n_symbols; ++k)
        for (int n = 0; n < obs.n_subcarriers; ++n)
            for (int m = 0; m < obs.m_rx; ++m) {
                double re = 0.0, im = 0.0;
                f.read(reinterpret_cast<char*>(&re), sizeof(double));
                f.read(reinterpret_cast<char*>(&im), sizeof(double));
                obs.at(n, k)(m) = cplx(re, im);
            }
    if (!f) throw std::runtime_error("truncated observation snapshot: " + path.string());
    return obs;
}

}  // namespace locsense
