#include "ncal/neural.hpp"

#include <cmath>

#include "ncal/binary_io.hpp"
#include "ncal/rng.hpp"

namespace ncal {

DegeneratePilot::DegeneratePilot(std::size_t row)
    : std::runtime_error("pilot row " + std::to_string(row) + " has zero norm"), row_(row) {}

NonFiniteGradient::NonFiniteGradient(const std::string& block)
    : std::runtime_error("non-finite gradient in parameter block '" + block + "'"),
      block_(block) {}

Mlp::Mlp(std::vector<std::size_t> sizes, bool residual)
    : sizes_(std::move(sizes)), residual_(residual) {
  if (sizes_.size() < 2) throw std::invalid_argument("Mlp: need at least input and output sizes");
  for (std::size_t s : sizes_) {
    if (s == 0) throw std::invalid_argument("Mlp: zero layer width");
  }
  if (residual_ && sizes_.front() != sizes_.back()) {
    throw std::invalid_argument("Mlp: residual connection needs equal input and output widths");
  }
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(sizes_[l]);
    const auto out = static_cast<Eigen::Index>(sizes_[l + 1]);
    layers.push_back({Eigen::MatrixXd::Zero(out, in), Eigen::VectorXd::Zero(out)});
    if (l + 2 < sizes_.size()) {
      norms.push_back({Eigen::VectorXd::Ones(out), Eigen::VectorXd::Zero(out),
                       Eigen::VectorXd::Zero(out), Eigen::VectorXd::Ones(out)});
    }
  }
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& d : layers) n += static_cast<std::size_t>(d.weight.size() + d.bias.size());
  for (const auto& b : norms) n += static_cast<std::size_t>(b.scale.size() + b.shift.size());
  return n;
}

namespace {

std::span<double> span_of(Eigen::MatrixXd& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}
std::span<double> span_of(Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace

std::vector<ParamBlock> Mlp::parameters() {
  std::vector<ParamBlock> out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    out.push_back({"dense" + std::to_string(l) + ".weight", span_of(layers[l].weight)});
    out.push_back({"dense" + std::to_string(l) + ".bias", span_of(layers[l].bias)});
  }
  for (std::size_t l = 0; l < norms.size(); ++l) {
    out.push_back({"bn" + std::to_string(l) + ".scale", span_of(norms[l].scale)});
    out.push_back({"bn" + std::to_string(l) + ".shift", span_of(norms[l].shift)});
  }
  return out;
}

MlpGrads MlpGrads::zeros_like(const Mlp& net) {
  MlpGrads g;
  for (const auto& d : net.layers) {
    g.weight.push_back(Eigen::MatrixXd::Zero(d.weight.rows(), d.weight.cols()));
    g.bias.push_back(Eigen::VectorXd::Zero(d.bias.size()));
  }
  for (const auto& b : net.norms) {
    g.scale.push_back(Eigen::VectorXd::Zero(b.scale.size()));
    g.shift.push_back(Eigen::VectorXd::Zero(b.shift.size()));
  }
  return g;
}

std::vector<ParamBlock> MlpGrads::blocks() {
  // Same order as Mlp::parameters().
  std::vector<ParamBlock> out;
  for (std::size_t l = 0; l < weight.size(); ++l) {
    out.push_back({"dense" + std::to_string(l) + ".weight", span_of(weight[l])});
    out.push_back({"dense" + std::to_string(l) + ".bias", span_of(bias[l])});
  }
  for (std::size_t l = 0; l < scale.size(); ++l) {
    out.push_back({"bn" + std::to_string(l) + ".scale", span_of(scale[l])});
    out.push_back({"bn" + std::to_string(l) + ".shift", span_of(shift[l])});
  }
  return out;
}

void MlpGrads::set_zero() {
  for (auto& m : weight) m.setZero();
  for (auto& v : bias) v.setZero();
  for (auto& v : scale) v.setZero();
  for (auto& v : shift) v.setZero();
}

Eigen::MatrixXd mlp_forward(Mlp& net, const Eigen::MatrixXd& input, Mode mode, MlpCache* cache) {
  if (static_cast<std::size_t>(input.rows()) != net.input_width()) {
    throw DimensionMismatch("mlp_forward: input width " + std::to_string(input.rows()) +
                            ", expected " + std::to_string(net.input_width()));
  }
  if (cache != nullptr) {
    *cache = MlpCache{};
    cache->mode = mode;
  }
  const Eigen::Index batch = input.cols();
  Eigen::MatrixXd act = input;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const DenseLayer& dense = net.layers[l];
    Eigen::MatrixXd z = dense.weight * act;
    z.colwise() += dense.bias;
    if (cache != nullptr) cache->layer_input.push_back(std::move(act));
    if (l == net.hidden_count()) {
      act = std::move(z);
      break;
    }

    BatchNorm& bn = net.norms[l];
    Eigen::VectorXd mean;
    Eigen::VectorXd var;
    if (mode == Mode::kTrain) {
      mean = z.rowwise().mean();
      var = (z.colwise() - mean).array().square().rowwise().mean();
      const double n = static_cast<double>(batch);
      const double unbias = batch > 1 ? n / (n - 1.0) : 1.0;
      bn.running_mean = (1.0 - net.bn_momentum) * bn.running_mean + net.bn_momentum * mean;
      bn.running_var = (1.0 - net.bn_momentum) * bn.running_var + net.bn_momentum * unbias * var;
    } else {
      mean = bn.running_mean;
      var = bn.running_var;
    }
    const Eigen::VectorXd inv_std = (var.array() + net.bn_eps).rsqrt();
    Eigen::MatrixXd xhat = (z.colwise() - mean).array().colwise() * inv_std.array();
    Eigen::MatrixXd y = (xhat.array().colwise() * bn.scale.array()).colwise() + bn.shift.array();
    act = y.cwiseMax(0.0);
    if (cache != nullptr) {
      cache->normalized.push_back(std::move(xhat));
      cache->inv_std.push_back(inv_std);
      cache->pre_relu.push_back(std::move(y));
    }
  }
  if (net.residual()) act += input;
  return act;
}

Eigen::MatrixXd mlp_infer(const Mlp& net, const Eigen::MatrixXd& input) {
  // Infer mode never writes to the net.
  return mlp_forward(const_cast<Mlp&>(net), input, Mode::kInfer, nullptr);
}

Eigen::MatrixXd mlp_backward(const Mlp& net, const MlpCache& cache, const Eigen::MatrixXd& d_output,
                             MlpGrads& grads) {
  if (cache.layer_input.size() != net.layers.size()) {
    throw std::invalid_argument("mlp_backward: cache does not match network");
  }
  Eigen::MatrixXd delta = d_output;
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    if (l < net.hidden_count()) {
      // delta is dL/d(ReLU output); go back through ReLU and batch-norm.
      const Eigen::MatrixXd& y = cache.pre_relu[l];
      const Eigen::MatrixXd& xhat = cache.normalized[l];
      const Eigen::VectorXd& inv_std = cache.inv_std[l];
      Eigen::MatrixXd dy = (y.array() > 0.0).select(delta, 0.0);
      grads.shift[l] += dy.rowwise().sum();
      grads.scale[l] += (dy.array() * xhat.array()).rowwise().sum().matrix();
      Eigen::MatrixXd dxhat = dy.array().colwise() * net.norms[l].scale.array();
      if (cache.mode == Mode::kTrain) {
        const double n = static_cast<double>(dxhat.cols());
        const Eigen::VectorXd sum_d = dxhat.rowwise().sum();
        const Eigen::VectorXd sum_dx = (dxhat.array() * xhat.array()).rowwise().sum();
        Eigen::MatrixXd t = (n * dxhat).colwise() - sum_d;
        t -= (xhat.array().colwise() * sum_dx.array()).matrix();
        delta = (t.array().colwise() * (inv_std.array() / n)).matrix();
      } else {
        delta = dxhat.array().colwise() * inv_std.array();
      }
    }
    grads.weight[l].noalias() += delta * cache.layer_input[l].transpose();
    grads.bias[l] += delta.rowwise().sum();
    delta = net.layers[l].weight.transpose() * delta;
  }
  if (net.residual()) delta += d_output;
  return delta;
}

Mlp init_net(const std::vector<std::size_t>& layer_sizes, std::uint64_t seed, bool residual) {
  Mlp net(layer_sizes, residual);
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(Stream::kInit)}));
  for (DenseLayer& d : net.layers) {
    const double limit = std::sqrt(6.0 / static_cast<double>(d.weight.rows() + d.weight.cols()));
    // Row-major fill order so the draw sequence matches the file layout.
    for (Eigen::Index r = 0; r < d.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < d.weight.cols(); ++c) d.weight(r, c) = rng.uniform(-limit, limit);
    }
  }
  return net;
}

std::vector<double> complex_to_real_stack(std::span<const cdouble> h) {
  const std::size_t m = h.size();
  std::vector<double> r(2 * m);
  for (std::size_t i = 0; i < m; ++i) {
    r[i] = h[i].real();
    r[m + i] = h[i].imag();
  }
  return r;
}

std::vector<cdouble> real_stack_to_complex(std::span<const double> r) {
  if (r.size() % 2 != 0) {
    throw DimensionMismatch("real_stack_to_complex: odd width " + std::to_string(r.size()));
  }
  const std::size_t m = r.size() / 2;
  std::vector<cdouble> h(m);
  for (std::size_t i = 0; i < m; ++i) h[i] = {r[i], r[m + i]};
  return h;
}

Eigen::MatrixXd stack_user_columns(std::span<const CMatrix> mats) {
  if (mats.empty()) return {};
  const std::size_t m = mats.front().rows();
  const std::size_t k_users = mats.front().cols();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(2 * m),
                      static_cast<Eigen::Index>(mats.size() * k_users));
  for (std::size_t b = 0; b < mats.size(); ++b) {
    const CMatrix& h = mats[b];
    if (h.rows() != m || h.cols() != k_users) {
      throw DimensionMismatch("stack_user_columns: inconsistent shape " + shape_string(h));
    }
    for (std::size_t k = 0; k < k_users; ++k) {
      const auto col = static_cast<Eigen::Index>(b * k_users + k);
      for (std::size_t i = 0; i < m; ++i) {
        out(static_cast<Eigen::Index>(i), col) = h(i, k).real();
        out(static_cast<Eigen::Index>(m + i), col) = h(i, k).imag();
      }
    }
  }
  return out;
}

std::vector<CMatrix> unstack_user_rows(const Eigen::MatrixXd& out, std::size_t n_mats,
                                       std::size_t k_users) {
  if (static_cast<std::size_t>(out.cols()) != n_mats * k_users || out.rows() % 2 != 0) {
    throw DimensionMismatch("unstack_user_rows: unexpected activation shape");
  }
  const std::size_t m = static_cast<std::size_t>(out.rows()) / 2;
  std::vector<CMatrix> mats(n_mats, CMatrix(k_users, m));
  for (std::size_t b = 0; b < n_mats; ++b) {
    for (std::size_t k = 0; k < k_users; ++k) {
      const auto col = static_cast<Eigen::Index>(b * k_users + k);
      for (std::size_t i = 0; i < m; ++i) {
        // Row k is h_k^H.
        mats[b](k, i) = {out(static_cast<Eigen::Index>(i), col),
                         -out(static_cast<Eigen::Index>(m + i), col)};
      }
    }
  }
  return mats;
}

CMatrix calibrate_all_users(Mlp& net, const CMatrix& h_hat_ul, Mode mode) {
  if (2 * h_hat_ul.rows() != net.input_width() || net.input_width() != net.output_width()) {
    throw DimensionMismatch("calibrate_all_users: channel " + shape_string(h_hat_ul) +
                            " does not fit net width " + std::to_string(net.input_width()));
  }
  const Eigen::MatrixXd in = stack_user_columns(std::span<const CMatrix>(&h_hat_ul, 1));
  const Eigen::MatrixXd out = mlp_forward(net, in, mode);
  return unstack_user_rows(out, 1, h_hat_ul.cols()).front();
}

void adam_step(std::span<const ParamBlock> params, std::span<const ParamBlock> grads,
               AdamState& state) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam_step: parameter/gradient block count mismatch");
  }
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].values.size() != grads[b].values.size()) {
      throw std::invalid_argument("adam_step: block '" + params[b].name + "' size mismatch");
    }
    for (double g : grads[b].values) {
      if (!std::isfinite(g)) throw NonFiniteGradient(params[b].name);
    }
  }
  if (state.m.empty()) {
    for (const ParamBlock& p : params) {
      state.m.emplace_back(p.values.size(), 0.0);
      state.v.emplace_back(p.values.size(), 0.0);
    }
  } else if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: optimizer state does not match parameters");
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    std::span<double> p = params[b].values;
    std::span<const double> g = grads[b].values;
    std::vector<double>& m = state.m[b];
    std::vector<double>& v = state.v[b];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

ParamBlock PilotParams::block() {
  auto e = raw.entries();
  // std::complex<double> is layout-compatible with double[2].
  return {"pilots", {reinterpret_cast<double*>(e.data()), 2 * e.size()}};
}

PilotParams init_pilots(std::size_t k, std::size_t l, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(Stream::kInit), 1}));
  CMatrix raw(k, l);
  for (cdouble& z : raw.entries()) z = rng.complex_gaussian(1.0);
  return {raw};
}

PilotMatrix normalize_pilots(const PilotParams& raw, double p_ul, std::size_t l) {
  const CMatrix& x = raw.raw;
  if (x.cols() != l) {
    throw DimensionMismatch("normalize_pilots: pilot length " + std::to_string(x.cols()) +
                            ", expected " + std::to_string(l));
  }
  const double target = std::sqrt(p_ul * static_cast<double>(l));
  CMatrix out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double norm_sq = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) norm_sq += std::norm(x(r, c));
    if (!(norm_sq > 0.0)) throw DegeneratePilot(r);
    const double s = target / std::sqrt(norm_sq);
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) *= s;
  }
  return {out};
}

namespace {

void write_matrix_rowmajor(BinaryWriter& w, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) w.f64(m(r, c));
  }
}

void read_matrix_rowmajor(BinaryReader& rd, Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rd.f64();
  }
}

void write_vector(BinaryWriter& w, const Eigen::VectorXd& v) {
  w.f64s({v.data(), static_cast<std::size_t>(v.size())});
}

void read_vector(BinaryReader& rd, Eigen::VectorXd& v) {
  rd.f64s({v.data(), static_cast<std::size_t>(v.size())});
}

void write_adam(BinaryWriter& w, const AdamState& s) {
  w.f64(s.lr);
  w.f64(s.beta1);
  w.f64(s.beta2);
  w.f64(s.eps);
  w.u64(s.step);
  w.u32(static_cast<std::uint32_t>(s.m.size()));
  for (std::size_t b = 0; b < s.m.size(); ++b) {
    w.u64(s.m[b].size());
    w.f64s(s.m[b]);
    w.f64s(s.v[b]);
  }
}

AdamState read_adam(BinaryReader& r) {
  AdamState s;
  s.lr = r.f64();
  s.beta1 = r.f64();
  s.beta2 = r.f64();
  s.eps = r.f64();
  s.step = r.u64();
  const std::uint32_t blocks = r.u32();
  s.m.resize(blocks);
  s.v.resize(blocks);
  for (std::uint32_t b = 0; b < blocks; ++b) {
    const std::uint64_t n = r.u64();
    s.m[b].resize(n);
    s.v[b].resize(n);
    r.f64s(s.m[b]);
    r.f64s(s.v[b]);
  }
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const Mlp& net = ckpt.net;
  BinaryWriter w(path);
  w.magic("NCBF");
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(net.sizes().size()));
  for (std::size_t s : net.sizes()) w.u32(static_cast<std::uint32_t>(s));
  w.u8(net.residual() ? 1 : 0);
  w.f64(net.bn_momentum);
  w.f64(net.bn_eps);
  w.u32(ckpt.epochs_done);
  for (const DenseLayer& d : net.layers) {
    write_matrix_rowmajor(w, d.weight);
    write_vector(w, d.bias);
  }
  for (const BatchNorm& b : net.norms) {
    write_vector(w, b.scale);
    write_vector(w, b.shift);
    write_vector(w, b.running_mean);
    write_vector(w, b.running_var);
  }
  w.u32(static_cast<std::uint32_t>(ckpt.pilots.raw.rows()));
  w.u32(static_cast<std::uint32_t>(ckpt.pilots.raw.cols()));
  for (cdouble z : ckpt.pilots.raw.entries()) {
    w.f64(z.real());
    w.f64(z.imag());
  }
  write_adam(w, ckpt.net_opt);
  write_adam(w, ckpt.pilot_opt);
  w.close();
}

Checkpoint load_checkpoint(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic("NCBF");
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion) {
    throw IoError("'" + path + "': unsupported checkpoint version " + std::to_string(version));
  }
  std::vector<std::size_t> sizes(r.u32());
  for (std::size_t& s : sizes) s = r.u32();
  const bool residual = r.u8() != 0;

  Checkpoint ckpt;
  ckpt.net = Mlp(sizes, residual);
  Mlp& net = ckpt.net;
  net.bn_momentum = r.f64();
  net.bn_eps = r.f64();
  ckpt.epochs_done = r.u32();
  for (DenseLayer& d : net.layers) {
    read_matrix_rowmajor(r, d.weight);
    read_vector(r, d.bias);
  }
  for (BatchNorm& b : net.norms) {
    read_vector(r, b.scale);
    read_vector(r, b.shift);
    read_vector(r, b.running_mean);
    read_vector(r, b.running_var);
  }
  const std::uint32_t k = r.u32();
  const std::uint32_t l = r.u32();
  ckpt.pilots.raw = CMatrix(k, l);
  for (cdouble& z : ckpt.pilots.raw.entries()) {
    const double re = r.f64();
    const double im = r.f64();
    z = {re, im};
  }
  ckpt.net_opt = read_adam(r);
  ckpt.pilot_opt = read_adam(r);
  if (!r.at_end()) throw IoError("'" + path + "': trailing bytes after checkpoint");
  return ckpt;
}

}  // namespace ncal
