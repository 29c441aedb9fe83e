#include "ncal/classic.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "ncal/rng.hpp"

namespace ncal {

CMatrix uplink_noise(std::size_t m, std::size_t l, double sigma1_sq, std::uint64_t seed) {
  CMatrix n(m, l);
  if (sigma1_sq == 0.0) return n;
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(Stream::kUplinkNoise)}));
  for (cdouble& z : n.entries()) z = rng.complex_gaussian(sigma1_sq);
  return n;
}

CMatrix uplink_receive(const CMatrix& h_ul, const PilotMatrix& x, double sigma1_sq,
                       std::uint64_t seed) {
  if (sigma1_sq < 0) throw std::invalid_argument("uplink_receive: negative noise variance");
  CMatrix y = matmul(h_ul, x.x);
  if (sigma1_sq > 0) y += uplink_noise(y.rows(), y.cols(), sigma1_sq, seed);
  return y;
}

PilotMatrix dft_pilots(std::size_t k, std::size_t l, double p_ul) {
  if (k > l) throw std::invalid_argument("dft_pilots: need pilot length >= user count");
  CMatrix x(k, l);
  const double amp = std::sqrt(p_ul);
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < l; ++c) {
      const double phase = -2.0 * std::numbers::pi * static_cast<double>(r * c % l) /
                           static_cast<double>(l);
      x(r, c) = std::polar(amp, phase);
    }
  }
  return {x};
}

CMatrix ls_estimate(const CMatrix& y, const PilotMatrix& x) {
  return matmul(y, right_pinv(x.x));
}

ZfResult zf_beamform(const CMatrix& h, double p_dl) {
  if (h.rows() > h.cols()) {
    throw DimensionMismatch("zf_beamform: need K <= M, got " + shape_string(h));
  }
  CMatrix v = right_pinv(h);
  const double gamma = std::sqrt(p_dl / frob_norm_sq(v));
  v *= gamma;
  return {{std::move(v)}, gamma};
}

std::vector<double> user_sinrs(const CMatrix& h_dl, const CMatrix& v, double sigma0_sq) {
  if (!(sigma0_sq > 0)) throw std::invalid_argument("sum_rate: sigma0_sq must be > 0");
  if (h_dl.rows() != v.rows() || h_dl.cols() != v.cols()) {
    throw DimensionMismatch("sum_rate: channel " + shape_string(h_dl) + " vs beamformer " +
                            shape_string(v));
  }
  const CMatrix g = matmul(hermitian(h_dl), v);  // g(k, j) = h_k^H v_j
  const std::size_t k_users = g.rows();
  std::vector<double> sinr(k_users);
  for (std::size_t k = 0; k < k_users; ++k) {
    double interference = 0.0;
    for (std::size_t j = 0; j < k_users; ++j) {
      if (j != k) interference += std::norm(g(k, j));
    }
    sinr[k] = std::norm(g(k, k)) / (interference + sigma0_sq);
  }
  return sinr;
}

double sum_rate_nats(const CMatrix& h_dl, const CMatrix& v, double sigma0_sq) {
  double r = 0.0;
  for (double s : user_sinrs(h_dl, v, sigma0_sq)) r += std::log1p(s);
  return r;
}

double sum_rate(const CMatrix& h_dl, const Beamformer& v, double sigma0_sq) {
  return sum_rate_nats(h_dl, v.v, sigma0_sq) / std::numbers::ln2;
}

namespace {

using EigenCMat = Eigen::MatrixXcd;

// Transmit update of WMMSE: v_k = (A + mu I)^{-1} b_k with the smallest
// mu >= 0 that meets the power budget.
CMatrix wmmse_transmit_update(const CMatrix& h_dl, const std::vector<cdouble>& u,
                              const std::vector<double>& w, double p_dl, double bisection_tol) {
  const auto m = static_cast<Eigen::Index>(h_dl.rows());
  const auto k_users = static_cast<Eigen::Index>(h_dl.cols());
  EigenCMat a = EigenCMat::Zero(m, m);
  EigenCMat b(m, k_users);
  for (Eigen::Index k = 0; k < k_users; ++k) {
    Eigen::VectorXcd hk(m);
    for (Eigen::Index i = 0; i < m; ++i) hk(i) = h_dl(static_cast<std::size_t>(i), k);
    const auto ku = static_cast<std::size_t>(k);
    a.noalias() += (w[ku] * std::norm(u[ku])) * hk * hk.adjoint();
    b.col(k) = (w[ku] * u[ku]) * hk;
  }
  Eigen::SelfAdjointEigenSolver<EigenCMat> eig(a);
  const Eigen::VectorXd lambda = eig.eigenvalues().cwiseMax(0.0);
  const EigenCMat proj = eig.eigenvectors().adjoint() * b;
  Eigen::VectorXd weight(m);
  for (Eigen::Index i = 0; i < m; ++i) weight(i) = proj.row(i).squaredNorm();

  auto power = [&](double mu) {
    double p = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      const double d = lambda(i) + mu;
      if (d <= 0.0) {
        if (weight(i) > 0.0) return std::numeric_limits<double>::infinity();
        continue;
      }
      p += weight(i) / (d * d);
    }
    return p;
  };

  double mu = 0.0;
  if (!(power(0.0) <= p_dl)) {
    double lo = 0.0;
    double hi = std::sqrt(weight.sum() / p_dl);
    while (!(power(hi) <= p_dl)) hi *= 2.0;
    while (hi - lo > bisection_tol * hi) {
      const double mid = 0.5 * (lo + hi);
      if (power(mid) <= p_dl) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    mu = hi;
  }

  Eigen::VectorXd inv(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double d = lambda(i) + mu;
    inv(i) = d > 0.0 ? 1.0 / d : 0.0;
  }
  const EigenCMat v = eig.eigenvectors() * (inv.asDiagonal() * proj);
  CMatrix out(h_dl.rows(), h_dl.cols());
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index k = 0; k < k_users; ++k) out(static_cast<std::size_t>(i), k) = v(i, k);
  }
  return out;
}

}  // namespace

WmmseResult wmmse_solve(const CMatrix& h_dl, double p_dl, double sigma0_sq,
                        const WmmseOptions& options) {
  if (h_dl.cols() < 1) throw std::invalid_argument("wmmse: need at least one user");
  const std::size_t k_users = h_dl.cols();

  WmmseResult result;
  result.beamformer = zf_beamform(hermitian(h_dl), p_dl).beamformer;
  double rate = sum_rate(h_dl, result.beamformer, sigma0_sq);
  result.rate_history.push_back(rate);

  std::vector<cdouble> u(k_users);
  std::vector<double> w(k_users);
  for (std::size_t it = 0; it < options.max_iter; ++it) {
    const CMatrix g = matmul(hermitian(h_dl), result.beamformer.v);
    for (std::size_t k = 0; k < k_users; ++k) {
      double total = sigma0_sq;
      for (std::size_t j = 0; j < k_users; ++j) total += std::norm(g(k, j));
      u[k] = g(k, k) / total;
      // 1 / MSE_k with the MMSE receiver; equals 1 + SINR_k.
      const double interference = total - std::norm(g(k, k));
      w[k] = total / interference;
    }
    CMatrix v = wmmse_transmit_update(h_dl, u, w, p_dl, options.bisection_tol);
    const double next = sum_rate(h_dl, Beamformer{v}, sigma0_sq);
    ++result.iterations;
    if (!(next >= rate)) break;  // inexact subproblem; keep the better iterate
    result.beamformer.v = std::move(v);
    result.rate_history.push_back(next);
    const double gain = next - rate;
    rate = next;
    if (gain < options.tol) break;
  }
  return result;
}

}  // namespace ncal
