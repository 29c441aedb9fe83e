#include <cmath>

#include "doctest.h"
#include "ncal/classic.hpp"
#include "ncal/gradcheck.hpp"
#include "ncal/gradients.hpp"
#include "ncal/pipeline.hpp"
#include "ncal/rng.hpp"
#include "ncal/tape.hpp"

using ncal::cdouble;
using ncal::CMatrix;

namespace {

CMatrix random_matrix(ncal::Rng& rng, std::size_t rows, std::size_t cols) {
  CMatrix out(rows, cols);
  for (cdouble& z : out.entries()) z = rng.complex_gaussian(1.0);
  return out;
}

double rel_err(const CMatrix& a, const CMatrix& b) {
  return ncal::frob_norm(a - b) / std::max(ncal::frob_norm(b), 1e-300);
}

// Restores the default adjoints even when a check fails.
struct CorruptionGuard {
  explicit CorruptionGuard(ncal::Primitive p) { ncal::set_corrupted_adjoint(p); }
  ~CorruptionGuard() { ncal::set_corrupted_adjoint(std::nullopt); }
};

}  // namespace

TEST_CASE("sensitivity matrix examples") {
  const CMatrix one{{1.0}};
  const CMatrix b = ncal::sumrate_b_matrix(one, one, 1.0);
  CHECK(std::abs(b(0, 0) - 0.5) <= 1e-15);
  CHECK(std::abs(ncal::grad_sumrate_wrt_v(one, one, 1.0)(0, 0) - 0.5) <= 1e-15);

  ncal::Rng rng(1);
  const CMatrix h = random_matrix(rng, 4, 3);
  CHECK(ncal::frob_norm(ncal::sumrate_b_matrix(h, CMatrix(4, 3), 0.5)) == 0.0);
}

TEST_CASE("single user gradient closed form") {
  ncal::Rng rng(2);
  for (int rep = 0; rep < 10; ++rep) {
    const CMatrix h = random_matrix(rng, 3, 1);
    const CMatrix v = random_matrix(rng, 3, 1);
    const double s = 0.4;
    cdouble g = 0.0;
    for (std::size_t m = 0; m < 3; ++m) g += std::conj(h(m, 0)) * v(m, 0);
    CMatrix expected(3, 1);
    for (std::size_t m = 0; m < 3; ++m) expected(m, 0) = h(m, 0) * g / (s + std::norm(g));
    CHECK(rel_err(ncal::grad_sumrate_wrt_v(h, v, s), expected) <= 1e-13);
  }
}

TEST_CASE("finite_diff") {
  const std::vector<double> c{1.0, -2.0, 0.5};
  const std::vector<double> x{0.3, 1.1, -4.0};
  const auto quad = [&](std::span<const double> p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) acc += c[i] * p[i] * p[i];
    return acc;
  };
  const auto d = ncal::finite_diff(quad, x);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(d[i] - 2.0 * c[i] * x[i]) <= 1e-9);
  const auto flat = ncal::finite_diff([](std::span<const double>) { return 7.0; }, x);
  for (double v : flat) CHECK(v == 0.0);
}

TEST_CASE("real gradient layout") {
  const CMatrix g{{cdouble(1.0, -2.0), cdouble(0.5, 0.25)}};
  CHECK(ncal::to_real_gradient(g) == std::vector<double>{2.0, -4.0, 1.0, 0.5});
}

TEST_CASE("closed-form gradients agree with finite differences") {
  const ncal::SuiteResult v = ncal::check_sumrate_v_grad(3, 10);
  CHECK_MESSAGE(v.passed, v.worst << " " << v.max_rel_err);
  CHECK(v.cases == 10);
  const ncal::SuiteResult x = ncal::check_zf_input_grad(4, 10);
  CHECK_MESSAGE(x.passed, x.worst << " " << x.max_rel_err);
}

TEST_CASE("tape reproduces the closed-form zf gradients") {
  ncal::Rng rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    const CMatrix h_dl = random_matrix(rng, 6, 3);
    const CMatrix x = ncal::hermitian(random_matrix(rng, 6, 3));
    const double s = 0.3;
    const double p = 2.0;
    const double gamma = std::sqrt(p / ncal::frob_norm_sq(ncal::right_pinv(x)));

    ncal::Tape fixed;
    const auto leaf = fixed.leaf(x);
    fixed.seed(ncal::record_zf_rate(fixed, leaf, h_dl, s, p, gamma), 1.0);
    fixed.backward();
    CHECK(rel_err(fixed.grad(leaf), ncal::grad_sumrate_wrt_zf_input(x, h_dl, s, gamma)) <= 1e-10);

    ncal::Tape norm;
    const auto leaf2 = norm.leaf(x);
    const auto rate = ncal::record_zf_rate(norm, leaf2, h_dl, s, p);
    norm.seed(rate, 1.0);
    norm.backward();
    CHECK(rel_err(norm.grad(leaf2), ncal::grad_sumrate_wrt_zf_input_normalized(x, h_dl, s, p)) <= 1e-10);
    CHECK(norm.replay() <= 1e-12);
    // Same channel value as the direct evaluation.
    const ncal::ZfResult zf = ncal::zf_beamform(x, p);
    CHECK(std::abs(norm.value(rate)(0, 0).real() - ncal::sum_rate_nats(h_dl, zf.beamformer.v, s)) <= 1e-12);

    norm.zero_grad();
    norm.seed(rate, 0.0);
    norm.backward();
    CHECK(ncal::frob_norm(norm.grad(leaf2)) == 0.0);
  }
}

TEST_CASE("primitive adjoints pass and corruption is attributed") {
  const ncal::SuiteResult clean = ncal::check_primitive_adjoints(6);
  CHECK_MESSAGE(clean.passed, clean.worst << " " << clean.max_rel_err);
  for (ncal::Primitive p : {ncal::Primitive::kInverse, ncal::Primitive::kRowNormalize,
                            ncal::Primitive::kSumRate}) {
    CorruptionGuard guard(p);
    const ncal::SuiteResult bad = ncal::check_primitive_adjoints(6);
    CHECK_FALSE(bad.passed);
    CHECK(bad.worst.find(ncal::primitive_name(p)) != std::string::npos);
  }
  CHECK_FALSE(ncal::corrupted_adjoint().has_value());
}

TEST_CASE("end-to-end gradient of the calibrated pipeline") {
  const ncal::SuiteResult r = ncal::check_pipeline_grad(7);
  CHECK_MESSAGE(r.passed, r.worst << " " << r.max_rel_err);
  CHECK(r.cases > 100);
}

TEST_CASE("end-to-end gradient of the black-box pipeline") {
  ncal::SystemConfig cfg;
  cfg.m_antennas = 3;
  cfg.k_users = 2;
  cfg.pilot_len = 2;
  cfg.n_paths = 3;
  cfg.p_ul_mw = 1.0;
  cfg.sigma1_sq_mw = 0.1;
  cfg.p_dl_mw = 1.0;
  cfg.sigma0_sq_mw = 0.1;
  const auto pairs = ncal::gen_dataset(cfg, 3, 8);
  std::vector<const ncal::ChannelPair*> ptrs;
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    ptrs.push_back(&pairs[i]);
    seeds.push_back(100 + i);
  }
  ncal::PipelineInputs in;
  in.arch = ncal::Architecture::kBlackbox;
  in.cfg = &cfg;
  in.pairs = ptrs;
  in.noise_seeds = seeds;
  in.skip_singular = false;

  const ncal::Mlp net = ncal::init_net(ncal::blackbox_layer_sizes(cfg, {6}), 9);
  const ncal::PilotParams pilots = ncal::init_pilots(2, 2, 9);
  ncal::Mlp work = net;
  ncal::PipelineTape tape = ncal::record_pipeline(work, pilots, in);
  const ncal::PipelineGrads g = ncal::backprop_pipeline(work, tape, 1.0);

  auto loss_with = [&](auto&& edit) {
    ncal::Mlp n = net;
    ncal::PilotParams p = pilots;
    edit(n, p);
    return ncal::pipeline_loss(ncal::record_pipeline(n, p, in));
  };
  ncal::MlpGrads net_grads = g.net;
  auto gblocks = net_grads.blocks();
  // Floor shared across all parameters, as in the library suite.
  double scale = 0.0;
  for (const auto& b : gblocks) {
    for (double a : b.values) scale = std::max(scale, std::abs(a));
  }
  for (double a : g.pilots) scale = std::max(scale, std::abs(a));

  const double h = 1e-6;
  auto check_block = [&](std::size_t block, std::span<const double> analytic, bool pilot) {
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      auto shift = [&](double d) {
        return [&, d](ncal::Mlp& n, ncal::PilotParams& p) {
          auto blocks = pilot ? std::vector<ncal::ParamBlock>{p.block()} : n.parameters();
          blocks[block].values[i] += d;
        };
      };
      const double fd = (loss_with(shift(h)) - loss_with(shift(-h))) / (2 * h);
      CHECK(std::abs(fd - analytic[i]) <= 1e-5 * std::max({std::abs(fd), ncal::kRelErrFloor * scale}));
    }
  };
  for (std::size_t b = 0; b < gblocks.size(); ++b) {
    CAPTURE(gblocks[b].name);
    check_block(b, gblocks[b].values, false);
  }
  check_block(0, g.pilots, true);
}

TEST_CASE("calibration gradient at the true channel") {
  const ncal::TheoremResult t = ncal::check_theorem_calibration(10, 20);
  CHECK(t.channels == 20);
  CHECK(t.nonzero == 20);
  CHECK(t.improved == 20);
  CHECK(t.min_grad_ratio > 0.0);
  CHECK(t.passed);
}
