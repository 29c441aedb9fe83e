#ifndef NCAL_CLASSIC_HPP_
#define NCAL_CLASSIC_HPP_

#include <cstdint>
#include <vector>

#include "ncal/numerics.hpp"

namespace ncal {

/// K x L uplink pilots; row k is user k's sequence, ||row||^2 <= P_UL * L.
struct PilotMatrix {
  CMatrix x;
};

/// M x K downlink precoder; column k serves user k, Tr(V V^H) <= P_DL.
struct Beamformer {
  CMatrix v;
};

/// M x L matrix of i.i.d. CN(0, sigma1_sq) entries, reproducible from seed.
CMatrix uplink_noise(std::size_t m, std::size_t l, double sigma1_sq, std::uint64_t seed);

/// Y = H_UL X + N.
CMatrix uplink_receive(const CMatrix& h_ul, const PilotMatrix& x, double sigma1_sq,
                       std::uint64_t seed);

/// Rows of the L x L DFT matrix scaled to per-row power P_UL * L.
PilotMatrix dft_pilots(std::size_t k, std::size_t l, double p_ul);

/// Y X^H (X X^H)^{-1}, M x K.
CMatrix ls_estimate(const CMatrix& y, const PilotMatrix& x);

struct ZfResult {
  Beamformer beamformer;
  double gamma = 0.0;
};

/// h is K x M (row k = h_k^H). V = gamma h^H (h h^H)^{-1}, ||V||_F^2 = p_dl.
ZfResult zf_beamform(const CMatrix& h, double p_dl);

/// SINR of every user; h_dl is M x K with column k = h_k.
std::vector<double> user_sinrs(const CMatrix& h_dl, const CMatrix& v, double sigma0_sq);

/// Sum of ln(1 + SINR_k).
double sum_rate_nats(const CMatrix& h_dl, const CMatrix& v, double sigma0_sq);

/// Sum of log2(1 + SINR_k), bits/s/Hz.
double sum_rate(const CMatrix& h_dl, const Beamformer& v, double sigma0_sq);

struct WmmseOptions {
  std::size_t max_iter = 200;
  double tol = 1e-6;  // bits/s/Hz
  double bisection_tol = 1e-10;
};

struct WmmseResult {
  Beamformer beamformer;
  std::vector<double> rate_history;  // bits/s/Hz, entry 0 is the ZF start
  std::size_t iterations = 0;
};

/// Weighted MMSE block-coordinate ascent started from ZF on h_dl^H.
WmmseResult wmmse_solve(const CMatrix& h_dl, double p_dl, double sigma0_sq,
                        const WmmseOptions& options = {});

inline Beamformer wmmse_beamform(const CMatrix& h_dl, double p_dl, double sigma0_sq,
                                 std::size_t max_iter = 200, double tol = 1e-6) {
  return wmmse_solve(h_dl, p_dl, sigma0_sq, {max_iter, tol, 1e-10}).beamformer;
}

}  // namespace ncal

#endif  // NCAL_CLASSIC_HPP_
