#ifndef NCAL_GRADIENTS_HPP_
#define NCAL_GRADIENTS_HPP_

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "ncal/channel.hpp"
#include "ncal/neural.hpp"
#include "ncal/numerics.hpp"
#include "ncal/tape.hpp"

namespace ncal {

// All gradients here are conjugate-coordinate (dR/d conj(.)) in nats.

/// h_dl (M x K) times the matrix B of per-user SINR sensitivities.
CMatrix grad_sumrate_wrt_v(const CMatrix& h_dl, const CMatrix& v, double sigma0_sq);

/// Gradient of R(gamma * x^H (x x^H)^{-1}) with respect to the ZF input x
/// (K x M), holding gamma constant.
CMatrix grad_sumrate_wrt_zf_input(const CMatrix& x_in, const CMatrix& h_dl, double sigma0_sq,
                                  double gamma);

/// Same map but with gamma recomputed from x so that ||V||_F^2 = p_dl;
/// this is the gradient the training path sees.
CMatrix grad_sumrate_wrt_zf_input_normalized(const CMatrix& x_in, const CMatrix& h_dl,
                                             double sigma0_sq, double p_dl);

/// Records x_in -> ZF -> sum-rate on the tape. With fixed_gamma the power
/// normalization is replaced by a constant scale. Returns the rate node.
Tape::NodeId record_zf_rate(Tape& tape, Tape::NodeId x_in, const CMatrix& h_dl, double sigma0_sq,
                            double p_dl, std::optional<double> fixed_gamma = std::nullopt);

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
std::vector<double> finite_diff(const std::function<double(std::span<const double>)>& f,
                                std::span<const double> x0, double eps = 1e-5);

/// Interleaved (re, im) real-coordinate gradient 2 * conj-gradient.
std::vector<double> to_real_gradient(const CMatrix& conj_grad);

enum class Architecture {
  kCalibrated,  // LS -> shared per-user net -> ZF
  kBlackbox,    // received pilots -> one net -> power-normalized V
};

/// Per-batch record of a forward pass through the full pipeline.
struct PipelineTape {
  Architecture arch = Architecture::kCalibrated;
  std::size_t k_users = 0;
  std::size_t m_antennas = 0;
  std::vector<std::size_t> used;  // batch positions that survived the uplink stage
  std::vector<Tape> uplink;
  std::vector<Tape::NodeId> pilot_leaf;
  std::vector<Tape::NodeId> uplink_out;
  MlpCache cache;
  Eigen::MatrixXd net_output;
  std::vector<Tape> downlink;
  std::vector<Tape::NodeId> downlink_leaf;
  std::vector<Tape::NodeId> rate_node;
  std::vector<bool> downlink_ok;
  std::vector<double> rates_nats;  // per used sample; NaN when skipped
  std::size_t skipped = 0;
};

struct PipelineInputs {
  Architecture arch = Architecture::kCalibrated;
  const SystemConfig* cfg = nullptr;
  std::span<const ChannelPair* const> pairs;
  std::span<const std::uint64_t> noise_seeds;
  Mode mode = Mode::kTrain;
  // Singular Gram matrices are skipped and counted instead of thrown.
  bool skip_singular = true;
};

PipelineTape record_pipeline(Mlp& net, const PilotParams& pilots, const PipelineInputs& in);

struct PipelineGrads {
  std::vector<double> pilots;  // interleaved (re, im), congruent with PilotParams::block()
  MlpGrads net;
};

/// Reverse sweep for the loss -mean(R_nats) over the used, non-skipped
/// samples, scaled by loss_adjoint.
PipelineGrads backprop_pipeline(const Mlp& net, PipelineTape& tape, double loss_adjoint);

/// Mean of -R_nats over the recorded samples that were not skipped.
double pipeline_loss(const PipelineTape& tape);

}  // namespace ncal

#endif  // NCAL_GRADIENTS_HPP_
