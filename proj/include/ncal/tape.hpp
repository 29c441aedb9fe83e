#ifndef NCAL_TAPE_HPP_
#define NCAL_TAPE_HPP_

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "ncal/numerics.hpp"

namespace ncal {

enum class Primitive {
  kLeaf,
  kMatMul,
  kHermitian,
  kInverse,
  kAdd,
  kRowNormalize,
  kPowerNormalize,
  kScale,
  kSumRate,
};

std::string primitive_name(Primitive p);

/// Test hook: when set, the adjoint of the given primitive is deliberately
/// wrong. Used by the gradient self-check as a negative control.
void set_corrupted_adjoint(std::optional<Primitive> p);
std::optional<Primitive> corrupted_adjoint();

/// Records complex matrix primitives and runs the reverse sweep.
///
/// Gradients follow the conjugate-coordinate convention: grad(n) holds
/// dL/d(conj X) for a real loss L, so dL = 2 Re tr(grad^H dX). Real
/// coordinates recover dL/dRe = 2 Re(grad), dL/dIm = 2 Im(grad).
class Tape {
 public:
  using NodeId = std::size_t;

  NodeId leaf(CMatrix value);
  NodeId matmul(NodeId a, NodeId b);
  NodeId hermitian(NodeId a);
  NodeId inverse(NodeId a);
  NodeId add(NodeId a, NodeId b);
  /// Each row rescaled to squared norm target_sq.
  NodeId row_normalize(NodeId a, double target_sq);
  /// Whole matrix rescaled to squared Frobenius norm target_sq.
  NodeId power_normalize(NodeId a, double target_sq);
  NodeId scale(NodeId a, double factor);
  /// 1x1 node holding the sum-rate in nats of beamformer v (M x K) over
  /// the constant channel h_dl (M x K).
  NodeId sum_rate(NodeId v, const CMatrix& h_dl, double sigma0_sq);

  const CMatrix& value(NodeId n) const { return nodes_.at(n).value; }
  const CMatrix& grad(NodeId n) const { return nodes_.at(n).grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Adds adjoint to grad(n).
  void seed(NodeId n, const CMatrix& adjoint);
  /// Seeds a 1x1 node with a real adjoint.
  void seed(NodeId n, double adjoint);

  /// Reverse sweep over every node, accumulating into input gradients.
  void backward();
  void zero_grad();

  /// Recomputes every node from the leaves and returns the largest
  /// deviation from the recorded values.
  double replay() const;

 private:
  struct Node {
    Primitive op = Primitive::kLeaf;
    NodeId a = 0;
    NodeId b = 0;
    double param = 0.0;
    CMatrix channel;  // sum_rate only
    CMatrix value;
    CMatrix grad;
  };

  static Node op_node(Primitive op, NodeId a, NodeId b = 0, double param = 0.0);
  NodeId push(Node node);
  CMatrix evaluate(const Node& node, const std::vector<CMatrix>& values) const;
  void backprop_node(const Node& node);

  std::vector<Node> nodes_;
};

/// Beamformer-gradient matrix B (K x K) of the sum-rate in nats:
/// grad_V R = h_dl B, h_dl being M x K with column k = h_k.
CMatrix sumrate_b_matrix(const CMatrix& h_dl, const CMatrix& v, double sigma0_sq);

}  // namespace ncal

#endif  // NCAL_TAPE_HPP_
