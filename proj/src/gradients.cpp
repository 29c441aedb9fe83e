#include "ncal/gradients.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "ncal/classic.hpp"

namespace ncal {

CMatrix grad_sumrate_wrt_v(const CMatrix& h_dl, const CMatrix& v, double sigma0_sq) {
  return matmul(h_dl, sumrate_b_matrix(h_dl, v, sigma0_sq));
}

CMatrix grad_sumrate_wrt_zf_input(const CMatrix& x_in, const CMatrix& h_dl, double sigma0_sq,
                                  double gamma) {
  const CMatrix h = hermitian(h_dl);  // K x M, rows h_k^H
  const CMatrix x_h = hermitian(x_in);
  const CMatrix gram_inv = inverse(matmul(x_in, x_h));
  const CMatrix x_prime = matmul(gram_inv, x_in);
  CMatrix v = matmul(x_h, gram_inv);
  v *= cdouble(gamma, 0.0);
  const CMatrix b = sumrate_b_matrix(h_dl, v, sigma0_sq);
  const CMatrix bh_h = matmul(hermitian(b), h);  // B^H H

  CMatrix grad = matmul(gram_inv, bh_h);
  grad -= matmul(matmul(x_prime, matmul(h_dl, b)), x_prime);
  grad -= matmul(matmul(gram_inv, bh_h), matmul(x_h, x_prime));
  grad *= cdouble(gamma, 0.0);
  return grad;
}

Tape::NodeId record_zf_rate(Tape& tape, Tape::NodeId x_in, const CMatrix& h_dl, double sigma0_sq,
                            double p_dl, std::optional<double> fixed_gamma) {
  const Tape::NodeId x_h = tape.hermitian(x_in);
  const Tape::NodeId gram = tape.matmul(x_in, x_h);
  const Tape::NodeId gram_inv = tape.inverse(gram);
  const Tape::NodeId v0 = tape.matmul(x_h, gram_inv);
  const Tape::NodeId v =
      fixed_gamma ? tape.scale(v0, *fixed_gamma) : tape.power_normalize(v0, p_dl);
  return tape.sum_rate(v, h_dl, sigma0_sq);
}

CMatrix grad_sumrate_wrt_zf_input_normalized(const CMatrix& x_in, const CMatrix& h_dl,
                                             double sigma0_sq, double p_dl) {
  Tape tape;
  const Tape::NodeId x = tape.leaf(x_in);
  const Tape::NodeId r = record_zf_rate(tape, x, h_dl, sigma0_sq, p_dl);
  tape.seed(r, 1.0);
  tape.backward();
  return tape.grad(x);
}

std::vector<double> finite_diff(const std::function<double(std::span<const double>)>& f,
                                std::span<const double> x0, double eps) {
  std::vector<double> x(x0.begin(), x0.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + eps;
    const double fp = f(x);
    x[i] = orig - eps;
    const double fm = f(x);
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

std::vector<double> to_real_gradient(const CMatrix& conj_grad) {
  std::vector<double> out;
  out.reserve(2 * conj_grad.size());
  for (cdouble z : conj_grad.entries()) {
    out.push_back(2.0 * z.real());
    out.push_back(2.0 * z.imag());
  }
  return out;
}

namespace {

// Row-major vec(Y) as [Re; Im].
Eigen::VectorXd stack_matrix(const CMatrix& y) {
  const auto n = static_cast<Eigen::Index>(y.size());
  Eigen::VectorXd out(2 * n);
  auto e = y.entries();
  for (Eigen::Index i = 0; i < n; ++i) {
    out(i) = e[static_cast<std::size_t>(i)].real();
    out(n + i) = e[static_cast<std::size_t>(i)].imag();
  }
  return out;
}

CMatrix unstack_matrix(const Eigen::Ref<const Eigen::VectorXd>& r, std::size_t rows,
                       std::size_t cols) {
  CMatrix out(rows, cols);
  const auto n = static_cast<Eigen::Index>(rows * cols);
  auto e = out.entries();
  for (Eigen::Index i = 0; i < n; ++i) e[static_cast<std::size_t>(i)] = {r(i), r(n + i)};
  return out;
}

}  // namespace

PipelineTape record_pipeline(Mlp& net, const PilotParams& pilots, const PipelineInputs& in) {
  if (in.cfg == nullptr) throw std::invalid_argument("record_pipeline: missing config");
  const SystemConfig& cfg = *in.cfg;
  if (in.pairs.size() != in.noise_seeds.size()) {
    throw std::invalid_argument("record_pipeline: one noise seed per sample required");
  }
  const std::size_t m = cfg.m_antennas;
  const std::size_t k_users = cfg.k_users;
  const std::size_t l = cfg.pilot_len;
  if (pilots.raw.rows() != k_users || pilots.raw.cols() != l) {
    throw DimensionMismatch("record_pipeline: pilots " + shape_string(pilots.raw) +
                            " do not match K x L");
  }
  // Surfaces DegeneratePilot before any tape is built.
  (void)normalize_pilots(pilots, cfg.p_ul_mw, l);

  PipelineTape pt;
  pt.arch = in.arch;
  pt.k_users = k_users;
  pt.m_antennas = m;
  const double pilot_power = cfg.p_ul_mw * static_cast<double>(l);

  std::vector<CMatrix> net_inputs;
  for (std::size_t b = 0; b < in.pairs.size(); ++b) {
    const ChannelPair& pair = *in.pairs[b];
    if (pair.h_ul.rows() != m || pair.h_ul.cols() != k_users) {
      throw DimensionMismatch("record_pipeline: channel " + shape_string(pair.h_ul) +
                              " does not match M x K");
    }
    Tape tape;
    const Tape::NodeId raw = tape.leaf(pilots.raw);
    const Tape::NodeId x = tape.row_normalize(raw, pilot_power);
    const Tape::NodeId h = tape.leaf(pair.h_ul);
    const Tape::NodeId noise = tape.leaf(uplink_noise(m, l, cfg.sigma1_sq_mw, in.noise_seeds[b]));
    const Tape::NodeId y = tape.add(tape.matmul(h, x), noise);
    Tape::NodeId out = y;
    if (in.arch == Architecture::kCalibrated) {
      try {
        const Tape::NodeId x_h = tape.hermitian(x);
        const Tape::NodeId gram_inv = tape.inverse(tape.matmul(x, x_h));
        out = tape.matmul(y, tape.matmul(x_h, gram_inv));
      } catch (const SingularMatrix&) {
        if (!in.skip_singular) throw;
        ++pt.skipped;
        continue;
      }
    }
    pt.used.push_back(b);
    net_inputs.push_back(tape.value(out));
    pt.pilot_leaf.push_back(raw);
    pt.uplink_out.push_back(out);
    pt.uplink.push_back(std::move(tape));
  }
  if (pt.used.empty()) throw std::runtime_error("record_pipeline: every sample was skipped");

  const std::size_t n = pt.used.size();
  Eigen::MatrixXd net_in;
  if (in.arch == Architecture::kCalibrated) {
    net_in = stack_user_columns(net_inputs);
  } else {
    net_in.resize(static_cast<Eigen::Index>(2 * m * l), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) net_in.col(static_cast<Eigen::Index>(i)) = stack_matrix(net_inputs[i]);
  }
  pt.net_output = mlp_forward(net, net_in, in.mode, &pt.cache);

  std::vector<CMatrix> downlink_in;
  if (in.arch == Architecture::kCalibrated) {
    downlink_in = unstack_user_rows(pt.net_output, n, k_users);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      downlink_in.push_back(unstack_matrix(pt.net_output.col(static_cast<Eigen::Index>(i)), m, k_users));
    }
  }

  pt.downlink.resize(n);
  pt.downlink_leaf.assign(n, 0);
  pt.rate_node.assign(n, 0);
  pt.downlink_ok.assign(n, false);
  pt.rates_nats.assign(n, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < n; ++i) {
    const ChannelPair& pair = *in.pairs[pt.used[i]];
    Tape& tape = pt.downlink[i];
    const Tape::NodeId leaf = tape.leaf(std::move(downlink_in[i]));
    pt.downlink_leaf[i] = leaf;
    try {
      Tape::NodeId rate;
      if (in.arch == Architecture::kCalibrated) {
        rate = record_zf_rate(tape, leaf, pair.h_dl, cfg.sigma0_sq_mw, cfg.p_dl_mw);
      } else {
        rate = tape.sum_rate(tape.power_normalize(leaf, cfg.p_dl_mw), pair.h_dl, cfg.sigma0_sq_mw);
      }
      pt.rate_node[i] = rate;
      pt.rates_nats[i] = tape.value(rate)(0, 0).real();
      pt.downlink_ok[i] = true;
    } catch (const SingularMatrix&) {
      if (!in.skip_singular) throw;
      ++pt.skipped;
    } catch (const std::domain_error&) {  // all-zero blackbox output
      if (!in.skip_singular) throw;
      ++pt.skipped;
    }
  }
  return pt;
}

double pipeline_loss(const PipelineTape& tape) {
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < tape.rates_nats.size(); ++i) {
    if (!tape.downlink_ok[i]) continue;
    acc -= tape.rates_nats[i];
    ++count;
  }
  if (count == 0) throw std::runtime_error("pipeline_loss: no valid samples");
  return acc / static_cast<double>(count);
}

PipelineGrads backprop_pipeline(const Mlp& net, PipelineTape& tape, double loss_adjoint) {
  const std::size_t n = tape.used.size();
  if (tape.uplink.size() != n || tape.downlink.size() != n ||
      tape.cache.layer_input.size() != net.layers.size()) {
    throw std::invalid_argument("backprop_pipeline: tape does not match parameters");
  }
  std::size_t valid = 0;
  for (bool ok : tape.downlink_ok) valid += ok ? 1 : 0;
  if (valid == 0) throw std::runtime_error("backprop_pipeline: no valid samples");

  const std::size_t m = tape.m_antennas;
  const std::size_t k_users = tape.k_users;
  const double seed = -loss_adjoint / static_cast<double>(valid);

  Eigen::MatrixXd d_out = Eigen::MatrixXd::Zero(tape.net_output.rows(), tape.net_output.cols());
  for (std::size_t i = 0; i < n; ++i) {
    if (!tape.downlink_ok[i]) continue;
    Tape& dl = tape.downlink[i];
    dl.zero_grad();
    dl.seed(tape.rate_node[i], seed);
    dl.backward();
    const CMatrix& g = dl.grad(tape.downlink_leaf[i]);
    if (tape.arch == Architecture::kCalibrated) {
      // Row k of the ZF input is conj(net output column)^T.
      for (std::size_t k = 0; k < k_users; ++k) {
        const auto col = static_cast<Eigen::Index>(i * k_users + k);
        for (std::size_t r = 0; r < m; ++r) {
          d_out(static_cast<Eigen::Index>(r), col) = 2.0 * g(k, r).real();
          d_out(static_cast<Eigen::Index>(m + r), col) = -2.0 * g(k, r).imag();
        }
      }
    } else {
      const auto nn = static_cast<Eigen::Index>(g.size());
      auto e = g.entries();
      for (Eigen::Index j = 0; j < nn; ++j) {
        d_out(j, static_cast<Eigen::Index>(i)) = 2.0 * e[static_cast<std::size_t>(j)].real();
        d_out(nn + j, static_cast<Eigen::Index>(i)) = 2.0 * e[static_cast<std::size_t>(j)].imag();
      }
    }
  }

  PipelineGrads grads;
  grads.net = MlpGrads::zeros_like(net);
  const Eigen::MatrixXd d_in = mlp_backward(net, tape.cache, d_out, grads.net);

  CMatrix pilot_grad;
  for (std::size_t i = 0; i < n; ++i) {
    Tape& ul = tape.uplink[i];
    ul.zero_grad();
    const CMatrix& out_value = ul.value(tape.uplink_out[i]);
    CMatrix adj(out_value.rows(), out_value.cols());
    if (tape.arch == Architecture::kCalibrated) {
      for (std::size_t k = 0; k < k_users; ++k) {
        const auto col = static_cast<Eigen::Index>(i * k_users + k);
        for (std::size_t r = 0; r < m; ++r) {
          adj(r, k) = 0.5 * cdouble(d_in(static_cast<Eigen::Index>(r), col),
                                    d_in(static_cast<Eigen::Index>(m + r), col));
        }
      }
    } else {
      const auto nn = static_cast<Eigen::Index>(adj.size());
      auto e = adj.entries();
      for (Eigen::Index j = 0; j < nn; ++j) {
        e[static_cast<std::size_t>(j)] =
            0.5 * cdouble(d_in(j, static_cast<Eigen::Index>(i)), d_in(nn + j, static_cast<Eigen::Index>(i)));
      }
    }
    ul.seed(tape.uplink_out[i], adj);
    ul.backward();
    if (pilot_grad.empty()) {
      pilot_grad = ul.grad(tape.pilot_leaf[i]);
    } else {
      pilot_grad += ul.grad(tape.pilot_leaf[i]);
    }
  }
  grads.pilots = to_real_gradient(pilot_grad);
  return grads;
}

}  // namespace ncal
