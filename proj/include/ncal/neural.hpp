#ifndef NCAL_NEURAL_HPP_
#define NCAL_NEURAL_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ncal/classic.hpp"
#include "ncal/numerics.hpp"

namespace ncal {

enum class Mode { kTrain, kInfer };

class DegeneratePilot : public std::runtime_error {
 public:
  explicit DegeneratePilot(std::size_t row);
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& block);
  const std::string& block() const { return block_; }

 private:
  std::string block_;
};

/// Named view over a contiguous run of trainable scalars.
struct ParamBlock {
  std::string name;
  std::span<double> values;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

struct BatchNorm {
  Eigen::VectorXd scale;
  Eigen::VectorXd shift;
  Eigen::VectorXd running_mean;
  Eigen::VectorXd running_var;
};

/// Fully-connected net: (dense -> batch-norm -> ReLU) per hidden layer,
/// then a linear output layer. Columns of every activation matrix are
/// samples.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<std::size_t> sizes, bool residual = false);

  const std::vector<std::size_t>& sizes() const { return sizes_; }
  std::size_t input_width() const { return sizes_.front(); }
  std::size_t output_width() const { return sizes_.back(); }
  std::size_t hidden_count() const { return norms.size(); }
  bool residual() const { return residual_; }
  std::size_t parameter_count() const;

  std::vector<ParamBlock> parameters();

  std::vector<DenseLayer> layers;
  std::vector<BatchNorm> norms;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

 private:
  std::vector<std::size_t> sizes_;
  bool residual_ = false;
};

/// The per-user calibration network; input and output width 2M.
using CalibrationNet = Mlp;

struct MlpCache {
  Mode mode = Mode::kInfer;
  std::vector<Eigen::MatrixXd> layer_input;  // input of dense layer l
  std::vector<Eigen::MatrixXd> normalized;   // x-hat of hidden layer l
  std::vector<Eigen::VectorXd> inv_std;
  std::vector<Eigen::MatrixXd> pre_relu;     // BN output of hidden layer l
};

struct MlpGrads {
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::VectorXd> bias;
  std::vector<Eigen::VectorXd> scale;
  std::vector<Eigen::VectorXd> shift;

  static MlpGrads zeros_like(const Mlp& net);
  std::vector<ParamBlock> blocks();
  void set_zero();
};

/// Train mode normalizes with batch statistics and updates the running
/// statistics; infer mode uses the running statistics.
Eigen::MatrixXd mlp_forward(Mlp& net, const Eigen::MatrixXd& input, Mode mode,
                            MlpCache* cache = nullptr);
Eigen::MatrixXd mlp_infer(const Mlp& net, const Eigen::MatrixXd& input);

/// Accumulates parameter gradients into grads and returns dL/d(input).
Eigen::MatrixXd mlp_backward(const Mlp& net, const MlpCache& cache, const Eigen::MatrixXd& d_output,
                             MlpGrads& grads);

Mlp init_net(const std::vector<std::size_t>& layer_sizes, std::uint64_t seed,
             bool residual = false);

/// [Re(h); Im(h)]
std::vector<double> complex_to_real_stack(std::span<const cdouble> h);
std::vector<cdouble> real_stack_to_complex(std::span<const double> r);

/// Column b*K + k holds user k of matrix b (each matrix M x K).
Eigen::MatrixXd stack_user_columns(std::span<const CMatrix> mats);

/// Inverse layout of stack_user_columns, returning K x M matrices whose row
/// k is the conjugate transpose of the k-th output vector.
std::vector<CMatrix> unstack_user_rows(const Eigen::MatrixXd& out, std::size_t n_mats,
                                       std::size_t k_users);

/// Applies the shared net to every user column of h_hat_ul (M x K) and
/// returns the calibrated K x M matrix fed to zero-forcing.
CMatrix calibrate_all_users(Mlp& net, const CMatrix& h_hat_ul, Mode mode);

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// Bias-corrected Adam. Checks every gradient before touching any
/// parameter.
void adam_step(std::span<const ParamBlock> params, std::span<const ParamBlock> grads,
               AdamState& state);

struct PilotParams {
  CMatrix raw;  // K x L, unconstrained
  ParamBlock block();
};

PilotParams init_pilots(std::size_t k, std::size_t l, std::uint64_t seed);

/// Rescales every row to squared norm p_ul * l.
PilotMatrix normalize_pilots(const PilotParams& raw, double p_ul, std::size_t l);

/// Everything needed to resume training bit-exactly.
struct Checkpoint {
  Mlp net;
  PilotParams pilots;
  AdamState net_opt;
  AdamState pilot_opt;
  std::uint32_t epochs_done = 0;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ncal

#endif  // NCAL_NEURAL_HPP_
