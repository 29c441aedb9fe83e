#include "ncal/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "ncal/rng.hpp"

namespace ncal {

std::vector<std::size_t> calibration_layer_sizes(const SystemConfig& cfg,
                                                 const std::vector<std::size_t>& hidden) {
  std::vector<std::size_t> sizes{2 * cfg.m_antennas};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(2 * cfg.m_antennas);
  return sizes;
}

std::vector<std::size_t> blackbox_layer_sizes(const SystemConfig& cfg,
                                              const std::vector<std::size_t>& hidden) {
  std::vector<std::size_t> sizes{2 * cfg.m_antennas * cfg.pilot_len};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(2 * cfg.m_antennas * cfg.k_users);
  return sizes;
}

NeuralCalibModel NeuralCalibModel::create(const SystemConfig& cfg,
                                          const std::vector<std::size_t>& hidden,
                                          std::uint64_t seed, Architecture arch, bool residual) {
  cfg.validate();
  NeuralCalibModel model;
  model.cfg = cfg;
  model.arch = arch;
  const auto sizes = arch == Architecture::kCalibrated ? calibration_layer_sizes(cfg, hidden)
                                                       : blackbox_layer_sizes(cfg, hidden);
  model.net = init_net(sizes, seed, residual);
  model.pilots = init_pilots(cfg.k_users, cfg.pilot_len, seed);
  return model;
}

Checkpoint NeuralCalibModel::to_checkpoint() const {
  return {net, pilots, net_opt, pilot_opt, epochs_done};
}

NeuralCalibModel NeuralCalibModel::from_checkpoint(const SystemConfig& cfg, Checkpoint ckpt) {
  if (ckpt.pilots.raw.rows() != cfg.k_users || ckpt.pilots.raw.cols() != cfg.pilot_len) {
    throw DimensionMismatch("checkpoint pilots " + shape_string(ckpt.pilots.raw) +
                            " do not match the configured K x L");
  }
  NeuralCalibModel model;
  model.cfg = cfg;
  if (ckpt.net.input_width() == 2 * cfg.m_antennas &&
      ckpt.net.output_width() == 2 * cfg.m_antennas) {
    model.arch = Architecture::kCalibrated;
  } else if (ckpt.net.input_width() == 2 * cfg.m_antennas * cfg.pilot_len &&
             ckpt.net.output_width() == 2 * cfg.m_antennas * cfg.k_users) {
    model.arch = Architecture::kBlackbox;
  } else {
    throw DimensionMismatch("checkpoint network widths do not match the configured M, K, L");
  }
  model.net = std::move(ckpt.net);
  model.pilots = std::move(ckpt.pilots);
  model.net_opt = std::move(ckpt.net_opt);
  model.pilot_opt = std::move(ckpt.pilot_opt);
  model.epochs_done = ckpt.epochs_done;
  return model;
}

ForwardResult forward_e2e(NeuralCalibModel& model, const ChannelPair& pair, Mode mode,
                          std::uint64_t noise_seed) {
  const ChannelPair* ptr = &pair;
  PipelineInputs in;
  in.arch = model.arch;
  in.cfg = &model.cfg;
  in.pairs = std::span<const ChannelPair* const>(&ptr, 1);
  in.noise_seeds = std::span<const std::uint64_t>(&noise_seed, 1);
  in.mode = mode;
  in.skip_singular = false;
  PipelineTape pt = record_pipeline(model.net, model.pilots, in);

  ForwardResult out;
  const CMatrix& leaf = pt.downlink[0].value(pt.downlink_leaf[0]);
  if (model.arch == Architecture::kCalibrated) {
    out.beamformer = zf_beamform(leaf, model.cfg.p_dl_mw).beamformer;
  } else {
    CMatrix v = leaf;
    v *= cdouble(std::sqrt(model.cfg.p_dl_mw / frob_norm_sq(v)), 0.0);
    out.beamformer = {v};
  }
  out.rate_bits = pt.rates_nats[0] / std::numbers::ln2;
  if (mode == Mode::kTrain) out.tape = std::move(pt);
  return out;
}

std::uint64_t eval_noise_seed(std::uint64_t eval_seed, std::size_t i) {
  return derive_seed(eval_seed, {static_cast<std::uint64_t>(Stream::kEvalNoise), i});
}

namespace {

constexpr std::size_t kEvalChunk = 256;

std::uint64_t train_noise_seed(std::uint64_t seed, std::size_t epoch, std::size_t sample) {
  return derive_seed(seed, {static_cast<std::uint64_t>(Stream::kUplinkNoise), epoch, sample});
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(Stream::kShuffle), epoch}));
  for (std::size_t i = n; i-- > 1;) {
    const std::size_t j = rng.engine()() % (i + 1);
    std::swap(order[i], order[j]);
  }
  return order;
}

void check_skip_rate(std::size_t skipped, std::size_t total) {
  if (static_cast<double>(skipped) > kMaxSkipRate * static_cast<double>(total)) {
    throw TrainingFailure("training skipped " + std::to_string(skipped) + " of " +
                          std::to_string(total) + " samples for singular Gram matrices");
  }
}

}  // namespace

std::vector<double> evaluate_model(const NeuralCalibModel& model,
                                   const std::vector<ChannelPair>& eval_set,
                                   std::uint64_t eval_seed, std::optional<double> p_ul_override) {
  SystemConfig cfg = model.cfg;
  if (p_ul_override) cfg.p_ul_mw = *p_ul_override;
  // Infer mode reads the network without modifying it.
  Mlp& net = const_cast<Mlp&>(model.net);

  std::vector<double> rates;
  rates.reserve(eval_set.size());
  for (std::size_t start = 0; start < eval_set.size(); start += kEvalChunk) {
    const std::size_t stop = std::min(eval_set.size(), start + kEvalChunk);
    std::vector<const ChannelPair*> ptrs;
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = start; i < stop; ++i) {
      ptrs.push_back(&eval_set[i]);
      seeds.push_back(eval_noise_seed(eval_seed, i));
    }
    PipelineInputs in;
    in.arch = model.arch;
    in.cfg = &cfg;
    in.pairs = ptrs;
    in.noise_seeds = seeds;
    in.mode = Mode::kInfer;
    in.skip_singular = false;
    const PipelineTape pt = record_pipeline(net, model.pilots, in);
    for (double r : pt.rates_nats) rates.push_back(r / std::numbers::ln2);
  }
  return rates;
}

TrainReport train(NeuralCalibModel& model, const std::vector<ChannelPair>& train_set,
                  const std::vector<ChannelPair>& eval_set, const TrainOptions& options) {
  if (train_set.empty() || eval_set.empty()) {
    throw std::invalid_argument("train: datasets must be non-empty");
  }
  if (options.batch_size == 0) throw std::invalid_argument("train: batch_size must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  report.seed = options.seed;
  model.net_opt.lr = options.lr;
  model.pilot_opt.lr = options.lr;

  std::size_t seen = 0;
  const std::size_t first_epoch = model.epochs_done;
  for (std::size_t epoch = first_epoch; epoch < first_epoch + options.epochs; ++epoch) {
    const auto order = epoch_order(options.seed, epoch, train_set.size());
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += options.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + options.batch_size);
      std::vector<const ChannelPair*> ptrs;
      std::vector<std::uint64_t> seeds;
      for (std::size_t i = b0; i < b1; ++i) {
        ptrs.push_back(&train_set[order[i]]);
        seeds.push_back(train_noise_seed(options.seed, epoch, order[i]));
      }
      PipelineInputs in;
      in.arch = model.arch;
      in.cfg = &model.cfg;
      in.pairs = ptrs;
      in.noise_seeds = seeds;
      in.mode = Mode::kTrain;
      in.skip_singular = true;
      PipelineTape pt = record_pipeline(model.net, model.pilots, in);
      report.skipped += pt.skipped;
      seen += ptrs.size();
      loss_sum += pipeline_loss(pt);
      ++batches;

      PipelineGrads grads = backprop_pipeline(model.net, pt, 1.0);
      const std::size_t batch_index = b0 / options.batch_size;
      try {
        auto params = model.net.parameters();
        auto gblocks = grads.net.blocks();
        adam_step(params, gblocks, model.net_opt);
        ParamBlock pilot_param = model.pilots.block();
        ParamBlock pilot_grad{"pilots", grads.pilots};
        adam_step(std::span<const ParamBlock>(&pilot_param, 1),
                  std::span<const ParamBlock>(&pilot_grad, 1), model.pilot_opt);
      } catch (const NonFiniteGradient& e) {
        throw NonFiniteGradient(e.block() + "' at epoch " + std::to_string(epoch) + " batch " +
                                std::to_string(batch_index) + " ('");
      }
    }
    check_skip_rate(report.skipped, seen);
    ++model.epochs_done;
    const double loss = loss_sum / static_cast<double>(batches);
    double eval_rate = std::numeric_limits<double>::quiet_NaN();
    if (options.evaluate_each_epoch || epoch + 1 == first_epoch + options.epochs) {
      eval_rate = mean(evaluate_model(model, eval_set, options.eval_seed));
    }
    report.train_loss_nats.push_back(loss);
    report.eval_rate_bits.push_back(eval_rate);
    if (options.on_epoch) options.on_epoch(epoch, loss, eval_rate);
  }
  report.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

namespace {

// LS estimates with DFT pilots for a span of samples.
std::vector<CMatrix> ls_estimates(const SystemConfig& cfg, const PilotMatrix& pilots,
                                  std::span<const ChannelPair* const> pairs,
                                  std::span<const std::uint64_t> seeds) {
  const CMatrix combiner = right_pinv(pilots.x);
  std::vector<CMatrix> out;
  out.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const CMatrix y = uplink_receive(pairs[i]->h_ul, pilots, cfg.sigma1_sq_mw, seeds[i]);
    out.push_back(matmul(y, combiner));
  }
  return out;
}

}  // namespace

BlockByBlockModel train_block_by_block(const SystemConfig& cfg,
                                       const std::vector<ChannelPair>& train_set,
                                       const std::vector<std::size_t>& hidden,
                                       const TrainOptions& options, MappingReport* report) {
  if (train_set.empty()) throw std::invalid_argument("train_block_by_block: empty training set");
  cfg.validate();
  BlockByBlockModel model;
  model.cfg = cfg;
  model.net = init_net(calibration_layer_sizes(cfg, hidden), options.seed);
  model.opt.lr = options.lr;
  const PilotMatrix pilots = dft_pilots(cfg.k_users, cfg.pilot_len, cfg.p_ul_mw);

  MlpCache cache;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    const auto order = epoch_order(options.seed, epoch, train_set.size());
    double mse_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += options.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + options.batch_size);
      std::vector<const ChannelPair*> ptrs;
      std::vector<std::uint64_t> seeds;
      std::vector<CMatrix> targets;
      for (std::size_t i = b0; i < b1; ++i) {
        ptrs.push_back(&train_set[order[i]]);
        seeds.push_back(train_noise_seed(options.seed, epoch, order[i]));
        targets.push_back(train_set[order[i]].h_dl);
      }
      const auto estimates = ls_estimates(cfg, pilots, ptrs, seeds);
      const Eigen::MatrixXd in = stack_user_columns(estimates);
      const Eigen::MatrixXd target = stack_user_columns(targets);
      const Eigen::MatrixXd out = mlp_forward(model.net, in, Mode::kTrain, &cache);
      const Eigen::MatrixXd diff = out - target;
      const double cols = static_cast<double>(diff.cols());
      mse_sum += diff.squaredNorm() / cols;
      ++batches;
      MlpGrads grads = MlpGrads::zeros_like(model.net);
      mlp_backward(model.net, cache, (2.0 / cols) * diff, grads);
      auto params = model.net.parameters();
      auto gblocks = grads.blocks();
      adam_step(params, gblocks, model.opt);
    }
    if (report != nullptr) report->train_mse.push_back(mse_sum / static_cast<double>(batches));
    if (options.on_epoch) {
      options.on_epoch(epoch, mse_sum / static_cast<double>(batches),
                       std::numeric_limits<double>::quiet_NaN());
    }
  }
  return model;
}

std::vector<double> evaluate_block_by_block(const BlockByBlockModel& model,
                                            const std::vector<ChannelPair>& eval_set,
                                            std::uint64_t eval_seed,
                                            std::optional<double> p_ul_override) {
  SystemConfig cfg = model.cfg;
  if (p_ul_override) cfg.p_ul_mw = *p_ul_override;
  const PilotMatrix pilots = dft_pilots(cfg.k_users, cfg.pilot_len, cfg.p_ul_mw);
  std::vector<double> rates;
  rates.reserve(eval_set.size());
  for (std::size_t start = 0; start < eval_set.size(); start += kEvalChunk) {
    const std::size_t stop = std::min(eval_set.size(), start + kEvalChunk);
    std::vector<const ChannelPair*> ptrs;
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = start; i < stop; ++i) {
      ptrs.push_back(&eval_set[i]);
      seeds.push_back(eval_noise_seed(eval_seed, i));
    }
    const auto estimates = ls_estimates(cfg, pilots, ptrs, seeds);
    const Eigen::MatrixXd out = mlp_infer(model.net, stack_user_columns(estimates));
    const auto predicted = unstack_user_rows(out, ptrs.size(), cfg.k_users);
    for (std::size_t i = 0; i < ptrs.size(); ++i) {
      const Beamformer v = zf_beamform(predicted[i], cfg.p_dl_mw).beamformer;
      rates.push_back(sum_rate(ptrs[i]->h_dl, v, cfg.sigma0_sq_mw));
    }
  }
  return rates;
}

double baseline_block_by_block(const SystemConfig& cfg, const std::vector<ChannelPair>& train_set,
                               const std::vector<ChannelPair>& eval_set, std::uint64_t seed,
                               const std::vector<std::size_t>& hidden, std::size_t epochs,
                               std::size_t batch_size, double lr) {
  TrainOptions opts;
  opts.epochs = epochs;
  opts.batch_size = batch_size;
  opts.lr = lr;
  opts.seed = seed;
  const BlockByBlockModel model = train_block_by_block(cfg, train_set, hidden, opts);
  return mean(evaluate_block_by_block(model, eval_set, opts.eval_seed));
}

std::vector<std::size_t> blackbox_hidden_for_budget(const SystemConfig& cfg,
                                                    const std::vector<std::size_t>& calib_hidden) {
  const std::size_t target = Mlp(calibration_layer_sizes(cfg, calib_hidden)).parameter_count();
  std::vector<std::size_t> best = calib_hidden;
  double best_gap = std::numeric_limits<double>::infinity();
  for (int step = 5; step <= 400; ++step) {
    const double s = step / 100.0;
    std::vector<std::size_t> hidden;
    for (std::size_t h : calib_hidden) {
      hidden.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(s * h))));
    }
    const std::size_t count = Mlp(blackbox_layer_sizes(cfg, hidden)).parameter_count();
    const double gap = std::abs(std::log(static_cast<double>(count) / static_cast<double>(target)));
    if (gap < best_gap) {
      best_gap = gap;
      best = hidden;
    }
  }
  return best;
}

double baseline_blackbox(const SystemConfig& cfg, const std::vector<ChannelPair>& train_set,
                         const std::vector<ChannelPair>& eval_set, std::uint64_t seed,
                         const std::vector<std::size_t>& calib_hidden, std::size_t epochs,
                         std::size_t batch_size, double lr) {
  NeuralCalibModel model = NeuralCalibModel::create(
      cfg, blackbox_hidden_for_budget(cfg, calib_hidden), seed, Architecture::kBlackbox);
  TrainOptions opts;
  opts.epochs = epochs;
  opts.batch_size = batch_size;
  opts.lr = lr;
  opts.seed = seed;
  opts.evaluate_each_epoch = false;
  train(model, train_set, eval_set, opts);
  return mean(evaluate_model(model, eval_set, opts.eval_seed));
}

std::vector<double> perfect_csit_rates(const std::vector<ChannelPair>& eval_set,
                                       const SystemConfig& cfg, CsitMethod method) {
  if (eval_set.empty()) throw std::invalid_argument("perfect_csit_rates: empty set");
  std::vector<double> rates;
  rates.reserve(eval_set.size());
  for (const ChannelPair& pair : eval_set) {
    const Beamformer v = method == CsitMethod::kZf
                             ? zf_beamform(hermitian(pair.h_dl), cfg.p_dl_mw).beamformer
                             : wmmse_beamform(pair.h_dl, cfg.p_dl_mw, cfg.sigma0_sq_mw);
    rates.push_back(sum_rate(pair.h_dl, v, cfg.sigma0_sq_mw));
  }
  return rates;
}

double eval_perfect_csit(const std::vector<ChannelPair>& eval_set, const SystemConfig& cfg,
                         CsitMethod method) {
  return mean(perfect_csit_rates(eval_set, cfg, method));
}

double mean(const std::vector<double>& xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc / static_cast<double>(xs.size());
}

double stddev(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double mu = mean(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - mu) * (x - mu);
  return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

}  // namespace ncal
