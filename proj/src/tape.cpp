#include "ncal/tape.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>

#include "ncal/classic.hpp"

namespace ncal {

namespace {

std::atomic<int> g_corrupted{-1};

void corrupt_if_selected(Primitive p, CMatrix& adjoint) {
  if (g_corrupted.load() == static_cast<int>(p)) adjoint *= cdouble(1.01, 0.0);
}

// Adjoint of y = s * x / ||x|| restricted to one row (or the whole matrix
// when rows == 1 and the span covers everything).
void normalize_adjoint(std::span<const cdouble> x, std::span<const cdouble> g, double target_sq,
                       std::span<cdouble> out) {
  double norm_sq = 0.0;
  double re_xg = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    norm_sq += std::norm(x[i]);
    re_xg += x[i].real() * g[i].real() + x[i].imag() * g[i].imag();
  }
  const double nrm = std::sqrt(norm_sq);
  const double s = std::sqrt(target_sq) / nrm;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] += s * (g[i] - x[i] * (re_xg / norm_sq));
}

CMatrix row_normalized(const CMatrix& x, double target_sq) {
  CMatrix out = x;
  const double t = std::sqrt(target_sq);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double n = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) n += std::norm(x(r, c));
    if (!(n > 0.0)) throw std::domain_error("row_normalize: zero row " + std::to_string(r));
    const double s = t / std::sqrt(n);
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) *= s;
  }
  return out;
}

CMatrix power_normalized(const CMatrix& x, double target_sq) {
  const double n = frob_norm_sq(x);
  if (!(n > 0.0)) throw std::domain_error("power_normalize: zero matrix");
  CMatrix out = x;
  out *= cdouble(std::sqrt(target_sq / n), 0.0);
  return out;
}

}  // namespace

std::string primitive_name(Primitive p) {
  switch (p) {
    case Primitive::kLeaf: return "leaf";
    case Primitive::kMatMul: return "matmul";
    case Primitive::kHermitian: return "hermitian";
    case Primitive::kInverse: return "inverse";
    case Primitive::kAdd: return "add";
    case Primitive::kRowNormalize: return "row_normalize";
    case Primitive::kPowerNormalize: return "power_normalize";
    case Primitive::kScale: return "scale";
    case Primitive::kSumRate: return "sum_rate";
  }
  return "unknown";
}

void set_corrupted_adjoint(std::optional<Primitive> p) {
  g_corrupted.store(p ? static_cast<int>(*p) : -1);
}

std::optional<Primitive> corrupted_adjoint() {
  const int v = g_corrupted.load();
  if (v < 0) return std::nullopt;
  return static_cast<Primitive>(v);
}

CMatrix sumrate_b_matrix(const CMatrix& h_dl, const CMatrix& v, double sigma0_sq) {
  if (!(sigma0_sq > 0)) throw std::invalid_argument("sum-rate gradient: sigma0_sq must be > 0");
  const CMatrix g = matmul(hermitian(h_dl), v);  // g(j, k) = h_j^H v_k
  const std::size_t k_users = g.rows();
  std::vector<double> total(k_users, sigma0_sq);
  for (std::size_t j = 0; j < k_users; ++j) {
    for (std::size_t i = 0; i < k_users; ++i) total[j] += std::norm(g(j, i));
  }
  CMatrix b(k_users, k_users);
  for (std::size_t j = 0; j < k_users; ++j) {
    const double signal = std::norm(g(j, j));
    const double interference_plus_noise = total[j] - signal;
    for (std::size_t k = 0; k < k_users; ++k) {
      if (j == k) {
        b(k, k) = g(k, k) / total[k];
      } else {
        b(j, k) = -signal * g(j, k) / (total[j] * interference_plus_noise);
      }
    }
  }
  return b;
}

Tape::Node Tape::op_node(Primitive op, NodeId a, NodeId b, double param) {
  Node n;
  n.op = op;
  n.a = a;
  n.b = b;
  n.param = param;
  return n;
}

Tape::NodeId Tape::push(Node node) {
  node.grad = CMatrix(node.value.rows(), node.value.cols());
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

Tape::NodeId Tape::leaf(CMatrix value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
  Node n = op_node(Primitive::kMatMul, a, b);
  n.value = ncal::matmul(value(a), value(b));
  return push(std::move(n));
}

Tape::NodeId Tape::hermitian(NodeId a) {
  Node n = op_node(Primitive::kHermitian, a);
  n.value = ncal::hermitian(value(a));
  return push(std::move(n));
}

Tape::NodeId Tape::inverse(NodeId a) {
  Node n = op_node(Primitive::kInverse, a);
  n.value = ncal::inverse(value(a));
  return push(std::move(n));
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  Node n = op_node(Primitive::kAdd, a, b);
  n.value = value(a) + value(b);
  return push(std::move(n));
}

Tape::NodeId Tape::row_normalize(NodeId a, double target_sq) {
  Node n = op_node(Primitive::kRowNormalize, a, 0, target_sq);
  n.value = row_normalized(value(a), target_sq);
  return push(std::move(n));
}

Tape::NodeId Tape::power_normalize(NodeId a, double target_sq) {
  Node n = op_node(Primitive::kPowerNormalize, a, 0, target_sq);
  n.value = power_normalized(value(a), target_sq);
  return push(std::move(n));
}

Tape::NodeId Tape::scale(NodeId a, double factor) {
  Node n = op_node(Primitive::kScale, a, 0, factor);
  n.value = cdouble(factor, 0.0) * value(a);
  return push(std::move(n));
}

Tape::NodeId Tape::sum_rate(NodeId v, const CMatrix& h_dl, double sigma0_sq) {
  Node n = op_node(Primitive::kSumRate, v, 0, sigma0_sq);
  n.channel = h_dl;
  n.value = CMatrix(1, 1);
  n.value(0, 0) = sum_rate_nats(h_dl, value(v), sigma0_sq);
  return push(std::move(n));
}

void Tape::seed(NodeId n, const CMatrix& adjoint) { nodes_.at(n).grad += adjoint; }

void Tape::seed(NodeId n, double adjoint) {
  Node& node = nodes_.at(n);
  if (node.value.size() != 1) throw DimensionMismatch("Tape::seed: scalar seed on matrix node");
  node.grad(0, 0) += adjoint;
}

void Tape::zero_grad() {
  for (Node& n : nodes_) n.grad = CMatrix(n.value.rows(), n.value.cols());
}

void Tape::backprop_node(const Node& node) {
  const CMatrix& g = node.grad;
  switch (node.op) {
    case Primitive::kLeaf:
      return;
    case Primitive::kMatMul: {
      CMatrix ga = ncal::matmul(g, ncal::hermitian(value(node.b)));
      CMatrix gb = ncal::matmul(ncal::hermitian(value(node.a)), g);
      corrupt_if_selected(node.op, ga);
      nodes_[node.a].grad += ga;
      nodes_[node.b].grad += gb;
      return;
    }
    case Primitive::kHermitian: {
      CMatrix ga = ncal::hermitian(g);
      corrupt_if_selected(node.op, ga);
      nodes_[node.a].grad += ga;
      return;
    }
    case Primitive::kInverse: {
      const CMatrix yh = ncal::hermitian(node.value);
      CMatrix ga = cdouble(-1.0, 0.0) * ncal::matmul(ncal::matmul(yh, g), yh);
      corrupt_if_selected(node.op, ga);
      nodes_[node.a].grad += ga;
      return;
    }
    case Primitive::kAdd: {
      CMatrix ga = g;
      corrupt_if_selected(node.op, ga);
      nodes_[node.a].grad += ga;
      nodes_[node.b].grad += g;
      return;
    }
    case Primitive::kRowNormalize: {
      const CMatrix& x = value(node.a);
      CMatrix ga(x.rows(), x.cols());
      const auto xe = x.entries();
      const auto ge = g.entries();
      auto out = ga.entries();
      for (std::size_t r = 0; r < x.rows(); ++r) {
        const std::size_t off = r * x.cols();
        normalize_adjoint(xe.subspan(off, x.cols()), ge.subspan(off, x.cols()), node.param,
                          out.subspan(off, x.cols()));
      }
      corrupt_if_selected(node.op, ga);
      nodes_[node.a].grad += ga;
      return;
    }
    case Primitive::kPowerNormalize: {
      const CMatrix& x = value(node.a);
      CMatrix ga(x.rows(), x.cols());
      normalize_adjoint(x.entries(), g.entries(), node.param, ga.entries());
      corrupt_if_selected(node.op, ga);
      nodes_[node.a].grad += ga;
      return;
    }
    case Primitive::kScale: {
      CMatrix ga = cdouble(node.param, 0.0) * g;
      corrupt_if_selected(node.op, ga);
      nodes_[node.a].grad += ga;
      return;
    }
    case Primitive::kSumRate: {
      const CMatrix& v = value(node.a);
      CMatrix ga = ncal::matmul(node.channel, sumrate_b_matrix(node.channel, v, node.param));
      ga *= cdouble(g(0, 0).real(), 0.0);
      corrupt_if_selected(node.op, ga);
      nodes_[node.a].grad += ga;
      return;
    }
  }
}

void Tape::backward() {
  for (std::size_t i = nodes_.size(); i-- > 0;) backprop_node(nodes_[i]);
}

CMatrix Tape::evaluate(const Node& node, const std::vector<CMatrix>& values) const {
  switch (node.op) {
    case Primitive::kLeaf: return node.value;
    case Primitive::kMatMul: return ncal::matmul(values[node.a], values[node.b]);
    case Primitive::kHermitian: return ncal::hermitian(values[node.a]);
    case Primitive::kInverse: return ncal::inverse(values[node.a]);
    case Primitive::kAdd: return values[node.a] + values[node.b];
    case Primitive::kRowNormalize: return row_normalized(values[node.a], node.param);
    case Primitive::kPowerNormalize: return power_normalized(values[node.a], node.param);
    case Primitive::kScale: return cdouble(node.param, 0.0) * values[node.a];
    case Primitive::kSumRate: {
      CMatrix out(1, 1);
      out(0, 0) = sum_rate_nats(node.channel, values[node.a], node.param);
      return out;
    }
  }
  throw std::logic_error("Tape::evaluate: unknown primitive");
}

double Tape::replay() const {
  std::vector<CMatrix> values;
  values.reserve(nodes_.size());
  double worst = 0.0;
  for (const Node& n : nodes_) {
    values.push_back(evaluate(n, values));
    worst = std::max(worst, max_abs_diff(values.back(), n.value));
  }
  return worst;
}

}  // namespace ncal
