#include "ncal/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>

#include "ncal/classic.hpp"
#include "ncal/gradients.hpp"
#include "ncal/pipeline.hpp"
#include "ncal/rng.hpp"
#include "ncal/tape.hpp"

namespace ncal {

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                          double floor_frac) {
  if (analytic.size() != numeric.size()) {
    throw std::invalid_argument("max_relative_error: length mismatch");
  }
  double scale = 0.0;
  for (double a : analytic) scale = std::max(scale, std::abs(a));
  const double floor = std::max(floor_frac * scale, std::numeric_limits<double>::min());
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

namespace {

CMatrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double variance = 1.0) {
  CMatrix out(rows, cols);
  for (cdouble& z : out.entries()) z = rng.complex_gaussian(variance);
  return out;
}

std::vector<double> flatten(const CMatrix& a) {
  std::vector<double> out;
  out.reserve(2 * a.size());
  for (cdouble z : a.entries()) {
    out.push_back(z.real());
    out.push_back(z.imag());
  }
  return out;
}

CMatrix unflatten(std::span<const double> x, std::size_t rows, std::size_t cols) {
  CMatrix out(rows, cols);
  auto e = out.entries();
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = {x[2 * i], x[2 * i + 1]};
  return out;
}

void record_case(SuiteResult& suite, double err, const std::string& label) {
  // NaN compares false and therefore sticks as the worst case.
  if (suite.cases == 0 || !(err <= suite.max_rel_err)) {
    suite.max_rel_err = err;
    suite.worst = label;
  }
  ++suite.cases;
}

void finish(SuiteResult& suite) { suite.passed = suite.max_rel_err <= suite.tolerance; }

// One primitive applied to leaves; returns the output node.
using Builder = std::function<Tape::NodeId(Tape&, const std::vector<Tape::NodeId>&)>;

struct PrimitiveCase {
  Primitive op;
  std::vector<CMatrix> inputs;
  Builder build;
  bool scalar_output = false;
};

// Max relative error over all inputs of L = Re<W, f(inputs)> (or f itself
// for scalar outputs).
double primitive_error(const PrimitiveCase& pc, Rng& rng) {
  Tape probe;
  std::vector<Tape::NodeId> leaves;
  for (const CMatrix& in : pc.inputs) leaves.push_back(probe.leaf(in));
  const Tape::NodeId out = pc.build(probe, leaves);
  const CMatrix w = pc.scalar_output ? CMatrix{{1.0}} : random_matrix(rng, probe.value(out).rows(),
                                                                       probe.value(out).cols());
  if (pc.scalar_output) {
    probe.seed(out, 1.0);
  } else {
    CMatrix half_w = w;
    half_w *= cdouble(0.5, 0.0);
    probe.seed(out, half_w);
  }
  probe.backward();

  double worst = 0.0;
  for (std::size_t j = 0; j < pc.inputs.size(); ++j) {
    const std::vector<double> analytic = to_real_gradient(probe.grad(leaves[j]));
    const std::size_t rows = pc.inputs[j].rows();
    const std::size_t cols = pc.inputs[j].cols();
    auto loss = [&](std::span<const double> x) {
      Tape t;
      std::vector<Tape::NodeId> ls;
      for (std::size_t i = 0; i < pc.inputs.size(); ++i) {
        ls.push_back(t.leaf(i == j ? unflatten(x, rows, cols) : pc.inputs[i]));
      }
      const Tape::NodeId o = pc.build(t, ls);
      return pc.scalar_output ? t.value(o)(0, 0).real() : real_inner(w, t.value(o));
    };
    const std::vector<double> numeric = finite_diff(loss, flatten(pc.inputs[j]));
    worst = std::max(worst, max_relative_error(analytic, numeric));
  }
  return worst;
}

}  // namespace

SuiteResult check_primitive_adjoints(std::uint64_t seed, double tol) {
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(Stream::kTest), 1}));
  std::vector<PrimitiveCase> cases;
  cases.push_back({Primitive::kMatMul,
                   {random_matrix(rng, 3, 4), random_matrix(rng, 4, 2)},
                   [](Tape& t, const auto& l) { return t.matmul(l[0], l[1]); }});
  cases.push_back({Primitive::kHermitian,
                   {random_matrix(rng, 3, 2)},
                   [](Tape& t, const auto& l) { return t.hermitian(l[0]); }});
  CMatrix well_conditioned = random_matrix(rng, 3, 3);
  well_conditioned += cdouble(3.0, 0.0) * CMatrix::identity(3);
  cases.push_back({Primitive::kInverse,
                   {well_conditioned},
                   [](Tape& t, const auto& l) { return t.inverse(l[0]); }});
  cases.push_back({Primitive::kAdd,
                   {random_matrix(rng, 3, 2), random_matrix(rng, 3, 2)},
                   [](Tape& t, const auto& l) { return t.add(l[0], l[1]); }});
  cases.push_back({Primitive::kRowNormalize,
                   {random_matrix(rng, 3, 4)},
                   [](Tape& t, const auto& l) { return t.row_normalize(l[0], 2.0); }});
  cases.push_back({Primitive::kPowerNormalize,
                   {random_matrix(rng, 3, 4)},
                   [](Tape& t, const auto& l) { return t.power_normalize(l[0], 2.0); }});
  cases.push_back({Primitive::kScale,
                   {random_matrix(rng, 3, 2)},
                   [](Tape& t, const auto& l) { return t.scale(l[0], 1.7); }});
  const CMatrix h = random_matrix(rng, 4, 3);
  cases.push_back({Primitive::kSumRate,
                   {random_matrix(rng, 4, 3)},
                   [h](Tape& t, const auto& l) { return t.sum_rate(l[0], h, 0.5); },
                   true});

  SuiteResult suite{"primitive adjoints", 0, 0.0, tol, false, ""};
  for (const PrimitiveCase& pc : cases) {
    record_case(suite, primitive_error(pc, rng), primitive_name(pc.op));
  }
  finish(suite);
  return suite;
}

namespace {

ChannelPair small_channel(std::size_t m, std::size_t k, std::uint64_t seed) {
  SystemConfig cfg;
  cfg.m_antennas = m;
  cfg.k_users = k;
  cfg.pilot_len = k;
  return gen_channel_pair(cfg, seed);
}

// Noise variance between 1e-3 and 1 times the mean received power per user.
double relative_noise(Rng& rng, const CMatrix& h_dl, const CMatrix& v) {
  const double signal = frob_norm_sq(matmul(hermitian(h_dl), v)) / static_cast<double>(v.cols());
  return signal * std::pow(10.0, rng.uniform(-3.0, 0.0));
}

}  // namespace

SuiteResult check_sumrate_v_grad(std::uint64_t seed, std::size_t instances, double tol) {
  constexpr std::size_t kM = 8;
  constexpr std::size_t kK = 4;
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(Stream::kTest), 2}));
  SuiteResult suite{"sum-rate gradient wrt V", 0, 0.0, tol, false, ""};
  for (std::size_t i = 0; i < instances; ++i) {
    const CMatrix h_dl = small_channel(kM, kK, derive_seed(seed, {2, i})).h_dl;
    const CMatrix v = random_matrix(rng, kM, kK, 1.0 / kK);
    const double sigma_sq = relative_noise(rng, h_dl, v);
    const std::vector<double> analytic = to_real_gradient(grad_sumrate_wrt_v(h_dl, v, sigma_sq));
    const std::vector<double> numeric = finite_diff(
        [&](std::span<const double> x) { return sum_rate_nats(h_dl, unflatten(x, kM, kK), sigma_sq); },
        flatten(v));
    record_case(suite, max_relative_error(analytic, numeric), "instance " + std::to_string(i));
  }
  finish(suite);
  return suite;
}

SuiteResult check_zf_input_grad(std::uint64_t seed, std::size_t instances, double tol) {
  constexpr std::size_t kM = 8;
  constexpr std::size_t kK = 4;
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(Stream::kTest), 3}));
  SuiteResult suite{"fixed-gamma ZF-input gradient", 0, 0.0, tol, false, ""};
  for (std::size_t i = 0; i < instances; ++i) {
    const CMatrix h_dl = small_channel(kM, kK, derive_seed(seed, {3, i})).h_dl;
    const CMatrix x = random_matrix(rng, kK, kM);
    const ZfResult zf = zf_beamform(x, 1.0);
    const double gamma = zf.gamma;
    const double sigma_sq = relative_noise(rng, h_dl, zf.beamformer.v);
    const std::vector<double> analytic =
        to_real_gradient(grad_sumrate_wrt_zf_input(x, h_dl, sigma_sq, gamma));
    const std::vector<double> numeric = finite_diff(
        [&](std::span<const double> p) {
          const CMatrix xp = unflatten(p, kK, kM);
          CMatrix v = matmul(hermitian(xp), inverse(matmul(xp, hermitian(xp))));
          v *= cdouble(gamma, 0.0);
          return sum_rate_nats(h_dl, v, sigma_sq);
        },
        flatten(x));
    record_case(suite, max_relative_error(analytic, numeric), "instance " + std::to_string(i));
  }
  finish(suite);
  return suite;
}

namespace {

std::vector<double> gather(std::span<const ParamBlock> blocks) {
  std::vector<double> out;
  for (const ParamBlock& b : blocks) out.insert(out.end(), b.values.begin(), b.values.end());
  return out;
}

void scatter(std::span<const double> x, std::span<const ParamBlock> blocks) {
  std::size_t off = 0;
  for (const ParamBlock& b : blocks) {
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(off), b.values.size(), b.values.begin());
    off += b.values.size();
  }
}

}  // namespace

SuiteResult check_pipeline_grad(std::uint64_t seed, double tol) {
  SystemConfig cfg;
  cfg.m_antennas = 4;
  cfg.k_users = 2;
  cfg.pilot_len = 2;
  cfg.n_paths = 3;
  cfg.p_ul_mw = 1.0;
  cfg.sigma1_sq_mw = 0.1;
  cfg.p_dl_mw = 1.0;
  cfg.sigma0_sq_mw = 0.1;
  constexpr std::size_t kBatch = 4;

  const std::vector<ChannelPair> pairs = gen_dataset(cfg, kBatch, derive_seed(seed, {4}));
  std::vector<const ChannelPair*> ptrs;
  std::vector<std::uint64_t> noise_seeds;
  for (std::size_t i = 0; i < kBatch; ++i) {
    ptrs.push_back(&pairs[i]);
    noise_seeds.push_back(derive_seed(seed, {5, i}));
  }
  PipelineInputs in;
  in.arch = Architecture::kCalibrated;
  in.cfg = &cfg;
  in.pairs = ptrs;
  in.noise_seeds = noise_seeds;
  in.mode = Mode::kTrain;
  in.skip_singular = false;

  Mlp net = init_net(calibration_layer_sizes(cfg, {8}), seed);
  PilotParams pilots = init_pilots(cfg.k_users, cfg.pilot_len, seed);

  auto all_params = [](Mlp& n, PilotParams& p) {
    std::vector<ParamBlock> blocks = n.parameters();
    blocks.push_back(p.block());
    return blocks;
  };

  Mlp work_net = net;
  PipelineTape pt = record_pipeline(work_net, pilots, in);
  PipelineGrads grads = backprop_pipeline(work_net, pt, 1.0);
  std::vector<double> analytic = gather(grads.net.blocks());
  analytic.insert(analytic.end(), grads.pilots.begin(), grads.pilots.end());

  const std::vector<double> x0 = gather(all_params(net, pilots));
  const std::vector<double> numeric = finite_diff(
      [&](std::span<const double> x) {
        Mlp n = net;
        PilotParams p = pilots;
        scatter(x, all_params(n, p));
        return pipeline_loss(record_pipeline(n, p, in));
      },
      x0);

  SuiteResult suite{"end-to-end pipeline gradient", 0, 0.0, tol, false, ""};
  // Report per block so a failure points at the offending parameters.
  std::size_t off = 0;
  for (const ParamBlock& b : all_params(net, pilots)) {
    const std::size_t n = b.values.size();
    const std::span<const double> a(analytic.data() + off, n);
    const std::span<const double> f(numeric.data() + off, n);
    // The floor is shared across the whole parameter vector.
    double scale = 0.0;
    for (double v : analytic) scale = std::max(scale, std::abs(v));
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double denom = std::max({std::abs(a[i]), std::abs(f[i]), kRelErrFloor * scale});
      worst = std::max(worst, std::abs(a[i] - f[i]) / denom);
    }
    record_case(suite, worst, b.name);
    off += n;
  }
  suite.cases = x0.size();
  finish(suite);
  return suite;
}

TheoremResult check_theorem_calibration(std::uint64_t seed, std::size_t channels) {
  constexpr std::size_t kM = 8;
  constexpr std::size_t kK = 4;
  constexpr double kPdl = 1.0;
  constexpr double kSigmaSq = 0.1;
  constexpr int kMaxHalvings = 60;

  TheoremResult res;
  res.channels = channels;
  res.min_grad_ratio = std::numeric_limits<double>::infinity();
  double gain_sum = 0.0;

  auto rate = [&](const CMatrix& x, const CMatrix& h_dl) {
    return sum_rate_nats(h_dl, zf_beamform(x, kPdl).beamformer.v, kSigmaSq);
  };
  // Backtracking from a step of 10% of ||X||; returns the accepted gain or 0.
  auto line_search = [&](const CMatrix& x, const CMatrix& dir, const CMatrix& h_dl, double r0) {
    const double dn = frob_norm(dir);
    if (!(dn > 0.0)) return 0.0;
    double t = 0.1 * frob_norm(x) / dn;
    for (int i = 0; i < kMaxHalvings; ++i, t *= 0.5) {
      const double r = rate(x + cdouble(t, 0.0) * dir, h_dl);
      if (r > r0) return r - r0;
    }
    return 0.0;
  };

  for (std::size_t c = 0; c < channels; ++c) {
    const CMatrix h_dl = small_channel(kM, kK, derive_seed(seed, {6, c})).h_dl;
    const CMatrix x = hermitian(h_dl);
    const double gamma = zf_beamform(x, kPdl).gamma;
    const double r0 = rate(x, h_dl);

    const CMatrix g_fixed = grad_sumrate_wrt_zf_input(x, h_dl, kSigmaSq, gamma);
    const double ratio = frob_norm(g_fixed) / frob_norm(h_dl);
    res.min_grad_ratio = std::min(res.min_grad_ratio, ratio);
    if (ratio > 1e-12) ++res.nonzero;
    if (line_search(x, g_fixed, h_dl, r0) > 0.0) ++res.improved_fixed_gamma;

    const CMatrix g_full = grad_sumrate_wrt_zf_input_normalized(x, h_dl, kSigmaSq, kPdl);
    const double gain = line_search(x, g_full, h_dl, r0);
    if (gain > 0.0) {
      ++res.improved;
      gain_sum += gain;
    }
  }
  res.mean_gain_nats = res.improved > 0 ? gain_sum / static_cast<double>(res.improved) : 0.0;
  res.passed = res.nonzero == channels && res.improved * 100 >= 99 * channels;
  return res;
}

bool GradCheckReport::passed() const {
  return theorem.passed &&
         std::all_of(suites.begin(), suites.end(), [](const SuiteResult& s) { return s.passed; });
}

GradCheckReport run_grad_checks(std::uint64_t seed) {
  GradCheckReport report;
  report.suites.push_back(check_primitive_adjoints(seed));
  report.suites.push_back(check_sumrate_v_grad(seed));
  report.suites.push_back(check_zf_input_grad(seed));
  report.suites.push_back(check_pipeline_grad(seed));
  report.theorem = check_theorem_calibration(seed);
  return report;
}

std::string format_report(const GradCheckReport& report) {
  std::string out;
  char line[256];
  for (const SuiteResult& s : report.suites) {
    std::snprintf(line, sizeof line, "%-32s %s  max_rel_err=%.3e tol=%.0e cases=%zu worst=%s\n",
                  s.name.c_str(), s.passed ? "PASS" : "FAIL", s.max_rel_err, s.tolerance, s.cases,
                  s.worst.c_str());
    out += line;
  }
  const TheoremResult& t = report.theorem;
  std::snprintf(line, sizeof line,
                "%-32s %s  nonzero=%zu/%zu improved=%zu/%zu fixed_gamma_direction=%zu/%zu "
                "min_grad_ratio=%.3e mean_gain_nats=%.3e\n",
                "ZF calibration potential", t.passed ? "PASS" : "FAIL", t.nonzero, t.channels,
                t.improved, t.channels, t.improved_fixed_gamma, t.channels, t.min_grad_ratio,
                t.mean_gain_nats);
  out += line;
  return out;
}

}  // namespace ncal
