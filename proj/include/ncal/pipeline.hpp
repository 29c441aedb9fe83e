#ifndef NCAL_PIPELINE_HPP_
#define NCAL_PIPELINE_HPP_

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "ncal/channel.hpp"
#include "ncal/classic.hpp"
#include "ncal/gradients.hpp"
#include "ncal/neural.hpp"

namespace ncal {

/// Raised when a training run exceeds the singular-sample budget.
class TrainingFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Maximum fraction of samples a run may skip for singular Gram matrices.
inline constexpr double kMaxSkipRate = 1e-3;

/// Learned pilots plus one network, trained end to end on the sum-rate.
/// kCalibrated is the LS -> shared per-user net -> ZF design; kBlackbox maps
/// the received pilots straight to a beamformer.
struct NeuralCalibModel {
  SystemConfig cfg;
  Architecture arch = Architecture::kCalibrated;
  PilotParams pilots;
  Mlp net;
  AdamState net_opt;
  AdamState pilot_opt;
  std::uint32_t epochs_done = 0;

  static NeuralCalibModel create(const SystemConfig& cfg, const std::vector<std::size_t>& hidden,
                                 std::uint64_t seed, Architecture arch = Architecture::kCalibrated,
                                 bool residual = false);
  Checkpoint to_checkpoint() const;
  static NeuralCalibModel from_checkpoint(const SystemConfig& cfg, Checkpoint ckpt);
};

/// Layer widths of the calibration net: 2M, hidden..., 2M.
std::vector<std::size_t> calibration_layer_sizes(const SystemConfig& cfg,
                                                 const std::vector<std::size_t>& hidden);
/// Layer widths of the black-box net: 2ML, hidden..., 2MK.
std::vector<std::size_t> blackbox_layer_sizes(const SystemConfig& cfg,
                                              const std::vector<std::size_t>& hidden);

struct TrainOptions {
  std::size_t epochs = 60;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  std::uint64_t eval_seed = 7;
  bool evaluate_each_epoch = true;
  std::function<void(std::size_t epoch, double loss, double eval_rate)> on_epoch;
};

struct TrainReport {
  std::vector<double> train_loss_nats;  // mean -R per epoch
  std::vector<double> eval_rate_bits;   // NaN when not evaluated
  double wall_clock_s = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::size_t skipped = 0;
};

struct ForwardResult {
  Beamformer beamformer;
  double rate_bits = 0.0;
  std::optional<PipelineTape> tape;  // train mode only
};

/// One sample through pilots -> uplink -> LS -> net -> ZF -> sum-rate.
ForwardResult forward_e2e(NeuralCalibModel& model, const ChannelPair& pair, Mode mode,
                          std::uint64_t noise_seed);

TrainReport train(NeuralCalibModel& model, const std::vector<ChannelPair>& train_set,
                  const std::vector<ChannelPair>& eval_set, const TrainOptions& options);

/// Noise seed of evaluation sample i; shared by every method.
std::uint64_t eval_noise_seed(std::uint64_t eval_seed, std::size_t i);

/// Infer-mode per-sample rates in bits/s/Hz. p_ul_override evaluates at a
/// different uplink power than the model was trained with.
std::vector<double> evaluate_model(const NeuralCalibModel& model,
                                   const std::vector<ChannelPair>& eval_set,
                                   std::uint64_t eval_seed,
                                   std::optional<double> p_ul_override = std::nullopt);

/// LS with DFT pilots -> supervised uplink-to-downlink mapping net -> ZF.
struct BlockByBlockModel {
  SystemConfig cfg;
  Mlp net;
  AdamState opt;
};

struct MappingReport {
  std::vector<double> train_mse;
  std::size_t skipped = 0;
};

BlockByBlockModel train_block_by_block(const SystemConfig& cfg,
                                       const std::vector<ChannelPair>& train_set,
                                       const std::vector<std::size_t>& hidden,
                                       const TrainOptions& options,
                                       MappingReport* report = nullptr);

std::vector<double> evaluate_block_by_block(const BlockByBlockModel& model,
                                            const std::vector<ChannelPair>& eval_set,
                                            std::uint64_t eval_seed,
                                            std::optional<double> p_ul_override = std::nullopt);

double baseline_block_by_block(const SystemConfig& cfg, const std::vector<ChannelPair>& train_set,
                               const std::vector<ChannelPair>& eval_set, std::uint64_t seed,
                               const std::vector<std::size_t>& hidden = {128, 256, 256},
                               std::size_t epochs = 60, std::size_t batch_size = 256,
                               double lr = 1e-3);

/// Hidden widths of the black-box net; keeps its parameter count within a
/// factor two of the calibration net.
std::vector<std::size_t> blackbox_hidden_for_budget(const SystemConfig& cfg,
                                                    const std::vector<std::size_t>& calib_hidden);

double baseline_blackbox(const SystemConfig& cfg, const std::vector<ChannelPair>& train_set,
                         const std::vector<ChannelPair>& eval_set, std::uint64_t seed,
                         const std::vector<std::size_t>& calib_hidden = {128, 256, 256},
                         std::size_t epochs = 60, std::size_t batch_size = 256, double lr = 1e-3);

enum class CsitMethod { kZf, kWmmse };

std::vector<double> perfect_csit_rates(const std::vector<ChannelPair>& eval_set,
                                       const SystemConfig& cfg, CsitMethod method);
double eval_perfect_csit(const std::vector<ChannelPair>& eval_set, const SystemConfig& cfg,
                         CsitMethod method);

double mean(const std::vector<double>& xs);
double stddev(const std::vector<double>& xs);

}  // namespace ncal

#endif  // NCAL_PIPELINE_HPP_
