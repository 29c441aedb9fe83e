// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails. Artifacts go to --work-dir.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ncal/bench.hpp"
#include "ncal/classic.hpp"
#include "ncal/config.hpp"
#include "ncal/gradcheck.hpp"
#include "ncal/pipeline.hpp"
#include "ncal/rng.hpp"

namespace fs = std::filesystem;
using ncal::CMatrix;

namespace {

constexpr std::uint64_t kSeed = 20240611;

// Desk-scale scenario. Widths, sizes, and scalars are the acceptance
// config; the residual skip keeps every user's output distinct.
constexpr const char* kDeskConfig =
    "m_antennas = 16\n"
    "k_users = 4\n"
    "pilot_len = 4\n"
    "n_paths = 5\n"
    "f_ul_hz = 2.4e9\n"
    "f_dl_hz = 2.5e9\n"
    "spacing_wavelengths = 0.5\n"
    "p_ul_dbm = -10\n"
    "p_dl_dbm = 5\n"
    "sigma0_sq_dbm = -85\n"
    "sigma1_sq_dbm = -85\n"
    "hidden = 128, 256, 256\n"
    "residual = true\n"
    "epochs = 60\n"
    "batch_size = 256\n"
    "lr = 0.001\n"
    "n_train = 20000\n"
    "n_eval = 500\n"
    "seed = 1\n"
    "data_seed = 2024\n"
    "eval_seed = 7\n";

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

struct Outcome {
  int id;
  bool passed;
  std::string detail;
};

std::vector<Outcome> g_outcomes;

void report(int id, bool passed, double seconds, const std::string& detail) {
  std::printf("criterion %d: %s (%.1f s) %s\n", id, passed ? "PASS" : "FAIL", seconds, detail.c_str());
  std::fflush(stdout);
  g_outcomes.push_back({id, passed, detail});
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

CMatrix random_matrix(ncal::Rng& rng, std::size_t rows, std::size_t cols) {
  CMatrix out(rows, cols);
  for (ncal::cdouble& z : out.entries()) z = rng.complex_gaussian(1.0);
  return out;
}

void criterion_1() {
  Clock clock;
  const ncal::SuiteResult v = ncal::check_sumrate_v_grad(kSeed, 50, 1e-6);
  const ncal::SuiteResult x = ncal::check_zf_input_grad(kSeed + 1, 50, 1e-6);
  const double t = clock.seconds();
  report(1, v.passed && x.passed && v.cases == 50 && x.cases == 50 && t < 60.0, t,
         fmt("grad_V max rel err %.3g, fixed-gamma grad_X max rel err %.3g (tol 1e-6, 50 instances each)",
             v.max_rel_err, x.max_rel_err));
}

void criterion_2() {
  Clock clock;
  const ncal::SuiteResult r = ncal::check_pipeline_grad(kSeed + 2, 1e-5);
  const double t = clock.seconds();
  report(2, r.passed && t < 120.0, t,
         fmt("%.0f scalars, max rel err %.3g (tol 1e-5), worst block ", static_cast<double>(r.cases),
             r.max_rel_err) +
             r.worst);
}

void criterion_3() {
  Clock clock;
  const ncal::TheoremResult r = ncal::check_theorem_calibration(kSeed + 3, 100);
  const double t = clock.seconds();
  const bool ok = r.channels == 100 && r.nonzero == 100 && r.improved >= 99 && t < 60.0;
  report(3, ok, t,
         fmt("nonzero %.0f/100, improved %.0f/100 (fixed-gamma direction %.0f/100), min |grad|/|H| %.3g",
             static_cast<double>(r.nonzero), static_cast<double>(r.improved),
             static_cast<double>(r.improved_fixed_gamma), r.min_grad_ratio));
}

void criterion_4(const std::vector<ncal::ChannelPair>& eval_set, const ncal::SystemConfig& sys) {
  Clock clock;
  ncal::Rng rng(kSeed + 4);
  double ls_err = 0.0;
  double zf_leak = 0.0;
  double zf_rate_err = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const CMatrix h = random_matrix(rng, 16, 4);
    const ncal::PilotMatrix x{random_matrix(rng, 4, 6)};
    const double scale = ncal::frob_norm(h);
    ls_err = std::max(ls_err, ncal::max_abs_diff(ncal::ls_estimate(ncal::matmul(h, x.x), x), h) / scale);

    const ncal::ZfResult zf = ncal::zf_beamform(ncal::hermitian(h), 1.0);
    const CMatrix g = ncal::matmul(ncal::hermitian(h), zf.beamformer.v);
    for (std::size_t j = 0; j < 4; ++j) {
      for (std::size_t k = 0; k < 4; ++k) {
        if (j != k) zf_leak = std::max(zf_leak, std::abs(g(j, k)) / zf.gamma);
      }
    }
    const double s = 0.1;
    const double closed = 4.0 * std::log2(1.0 + zf.gamma * zf.gamma / s);
    zf_rate_err = std::max(zf_rate_err, std::abs(ncal::sum_rate(h, zf.beamformer, s) - closed));
  }

  // WMMSE on the scenario eval set and on a moderate-SNR set where it has
  // room to improve on ZF.
  double worst_drop = 0.0;
  double worst_gap = 0.0;
  std::size_t samples = 0;
  auto run_wmmse = [&](const CMatrix& h, double p, double s) {
    const ncal::WmmseResult w = ncal::wmmse_solve(h, p, s);
    for (std::size_t i = 1; i < w.rate_history.size(); ++i) {
      worst_drop = std::max(worst_drop, w.rate_history[i - 1] - w.rate_history[i]);
    }
    const double zf = ncal::sum_rate(h, ncal::zf_beamform(ncal::hermitian(h), p).beamformer, s);
    worst_gap = std::max(worst_gap, zf - ncal::sum_rate(h, w.beamformer, s));
    ++samples;
  };
  for (const auto& p : eval_set) run_wmmse(p.h_dl, sys.p_dl_mw, sys.sigma0_sq_mw);
  for (int rep = 0; rep < 200; ++rep) run_wmmse(random_matrix(rng, 8, 4), 1.0, 0.3);

  const double t = clock.seconds();
  const bool ok = ls_err <= 1e-10 && zf_leak <= 1e-10 && zf_rate_err <= 1e-9 && worst_drop <= 1e-9 &&
                  worst_gap <= 0.0 && t < 60.0;
  report(4, ok, t,
         fmt("LS err %.2g, ZF leakage %.2g, ZF closed-form err %.2g, WMMSE worst step drop %.2g",
             ls_err, zf_leak, zf_rate_err, worst_drop) +
             fmt(", worst ZF-over-WMMSE %.2g bits over %.0f samples", worst_gap,
                 static_cast<double>(samples)));
}

ncal::ChannelPair permute_users(const ncal::ChannelPair& p, const std::vector<std::size_t>& perm) {
  ncal::ChannelPair out = p;
  for (std::size_t k = 0; k < perm.size(); ++k) {
    out.paths[k] = p.paths[perm[k]];
    for (std::size_t m = 0; m < p.h_ul.rows(); ++m) {
      out.h_ul(m, k) = p.h_ul(m, perm[k]);
      out.h_dl(m, k) = p.h_dl(m, perm[k]);
    }
  }
  return out;
}

void criterion_5() {
  Clock clock;
  ncal::SystemConfig cfg;
  cfg.m_antennas = 16;
  cfg.k_users = 8;
  cfg.pilot_len = 8;
  cfg.p_ul_mw = 1.0;
  cfg.sigma1_sq_mw = 0.01;
  cfg.p_dl_mw = 1.0;
  cfg.sigma0_sq_mw = 0.01;
  const auto train_set = ncal::gen_dataset(cfg, 256, kSeed + 5);
  const auto test_set = ncal::gen_dataset(cfg, 5, kSeed + 6);
  ncal::NeuralCalibModel model = ncal::NeuralCalibModel::create(cfg, {32, 32}, kSeed + 7);
  ncal::TrainOptions o;
  o.epochs = 1;
  o.batch_size = 32;
  o.evaluate_each_epoch = false;
  (void)ncal::train(model, train_set, test_set, o);

  ncal::Rng rng(kSeed + 8);
  double worst_v = 0.0;
  double worst_rate = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<std::size_t> perm(8);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    ncal::NeuralCalibModel moved = model;
    for (std::size_t k = 0; k < 8; ++k) {
      for (std::size_t l = 0; l < 8; ++l) moved.pilots.raw(k, l) = model.pilots.raw(perm[k], l);
    }
    for (std::size_t i = 0; i < test_set.size(); ++i) {
      const auto a = ncal::forward_e2e(model, test_set[i], ncal::Mode::kInfer, 1000 + i);
      const auto b = ncal::forward_e2e(moved, permute_users(test_set[i], perm), ncal::Mode::kInfer, 1000 + i);
      worst_rate = std::max(worst_rate, std::abs(a.rate_bits - b.rate_bits));
      for (std::size_t k = 0; k < 8; ++k) {
        for (std::size_t m = 0; m < 16; ++m) {
          worst_v = std::max(worst_v, std::abs(b.beamformer.v(m, k) - a.beamformer.v(m, perm[k])));
        }
      }
    }
  }
  const double t = clock.seconds();
  report(5, worst_v <= 1e-9 && worst_rate <= 1e-9, t,
         fmt("20 permutations x 5 channels, max |dV| %.2g, max |dR| %.2g bits", worst_v, worst_rate));
}

struct DeskResult {
  ncal::NeuralCalibModel neural;
  ncal::BlockByBlockModel bbb;
  double bbb_rate = 0.0;
};

DeskResult criterion_6(const ncal::RunConfig& cfg, const ncal::Datasets& data, const fs::path& work) {
  Clock clock;
  const ncal::SystemConfig& sys = cfg.system;
  ncal::TrainOptions o;
  o.epochs = cfg.epochs;
  o.batch_size = cfg.batch_size;
  o.lr = cfg.lr;
  o.seed = cfg.seed;
  o.eval_seed = cfg.eval_seed;
  o.evaluate_each_epoch = true;
  o.on_epoch = [](std::size_t e, double loss, double rate) {
    std::printf("  neural_calib epoch %zu loss %.5f eval %.4f bits\n", e, loss, rate);
    std::fflush(stdout);
  };

  DeskResult out;
  out.neural = ncal::NeuralCalibModel::create(sys, cfg.hidden, cfg.seed, ncal::Architecture::kCalibrated,
                                              cfg.residual);
  ncal::TrainReport rep = ncal::train(out.neural, data.train, data.eval, o);
  rep.config_hash = cfg.hash();
  ncal::save_checkpoint((work / "desk_model.ncbf").string(), out.neural.to_checkpoint());
  std::ofstream(work / "desk_train_report.csv") << ncal::train_report_csv(cfg, rep, 0);

  o.on_epoch = nullptr;
  out.bbb = ncal::train_block_by_block(sys, data.train, cfg.hidden, o);

  const auto wmmse = ncal::perfect_csit_rates(data.eval, sys, ncal::CsitMethod::kWmmse);
  const auto zf = ncal::perfect_csit_rates(data.eval, sys, ncal::CsitMethod::kZf);
  const auto neural = ncal::evaluate_model(out.neural, data.eval, cfg.eval_seed);
  const auto bbb = ncal::evaluate_block_by_block(out.bbb, data.eval, cfg.eval_seed);
  const double t = clock.seconds();

  std::vector<ncal::ResultRow> rows{ncal::make_row("wmmse_csit", cfg, wmmse), ncal::make_row("zf_csit", cfg, zf),
                                    ncal::make_row("neural_calib", cfg, neural),
                                    ncal::make_row("block_by_block", cfg, bbb)};
  std::ofstream(work / "desk_results.csv") << ncal::results_csv(cfg, rows);

  const double m_w = ncal::mean(wmmse);
  const double m_z = ncal::mean(zf);
  const double m_n = ncal::mean(neural);
  const double m_b = ncal::mean(bbb);
  out.bbb_rate = m_b;
  bool per_sample = true;
  for (std::size_t i = 0; i < wmmse.size(); ++i) per_sample = per_sample && wmmse[i] >= zf[i];
  const bool ok = per_sample && m_w >= m_z && m_z >= m_n && m_n > m_b && m_n >= 1.03 * m_b && t <= 1800.0;
  report(6, ok, t,
         fmt("wmmse %.4f >= zf %.4f >= neural %.4f > bbb %.4f", m_w, m_z, m_n, m_b) +
             fmt(" (neural/bbb %.3f, need >= 1.03; wmmse >= zf per sample: ", m_n / m_b) +
             (per_sample ? "yes)" : "no)"));

  // Smoothed training loss: the last 10-epoch window must not exceed the first.
  const auto& loss = rep.train_loss_nats;
  const double first = std::accumulate(loss.begin(), loss.begin() + 10, 0.0) / 10.0;
  const double last = std::accumulate(loss.end() - 10, loss.end(), 0.0) / 10.0;
  std::printf("invariant smoothed loss: %s (first window %.5f, last window %.5f nats)\n",
              last <= first ? "PASS" : "FAIL", first, last);
  if (!(last <= first)) g_outcomes.push_back({0, false, "smoothed loss"});
  return out;
}

void criterion_7(const ncal::RunConfig& cfg, const ncal::Datasets& data, const DeskResult& desk) {
  Clock clock;
  const double matched = ncal::mean(ncal::evaluate_model(desk.neural, data.eval, cfg.eval_seed));
  bool ok = true;
  std::string detail;
  for (double dbm : {-20.0, -15.0, -10.0, -5.0, 0.0}) {
    const double p = ncal::dbm_to_mw(dbm);
    const double neural = ncal::mean(ncal::evaluate_model(desk.neural, data.eval, cfg.eval_seed, p));
    const double bbb = ncal::mean(ncal::evaluate_block_by_block(desk.bbb, data.eval, cfg.eval_seed, p));
    const double dev = std::abs(neural - matched) / matched;
    ok = ok && dev <= 0.15 && neural > bbb;
    detail += fmt("[%g dBm: neural %.4f (%.1f%%) bbb %.4f] ", dbm, neural, 100.0 * dev, bbb);
  }
  const double t = clock.seconds();
  report(7, ok && t < 300.0, t, detail);
}

void criterion_8(const fs::path& work) {
  Clock clock;
  const fs::path dir = work / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "tiny.cfg") << "m_antennas = 6\nk_users = 2\np_ul_dbm = -10\np_dl_dbm = 5\n"
                                     "sigma0_sq_dbm = -85\nsigma1_sq_dbm = -85\nhidden = 16, 16\n"
                                     "epochs = 2\nbatch_size = 32\nn_train = 256\nn_eval = 32\n";
  std::string csv[2];
  bool ran = true;
  for (int run = 0; run < 2; ++run) {
    ncal::CliOptions o;
    o.command = "sweep";
    o.config_path = (dir / "tiny.cfg").string();
    o.out_dir = (dir / ("run" + std::to_string(run))).string();
    o.deterministic = true;
    o.axis = "users";
    o.values = "2,3";
    std::ostringstream out;
    std::ostringstream err;
    ran = ran && ncal::run_command(o, out, err) == ncal::kExitOk;
    std::ifstream f(fs::path(*o.out_dir) / "sweep_users.csv", std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    csv[run] = ss.str();
  }
  const double t = clock.seconds();
  report(8, ran && !csv[0].empty() && csv[0] == csv[1], t,
         fmt("two sweep runs, %.0f bytes each, identical: ", static_cast<double>(csv[0].size())) +
             (csv[0] == csv[1] ? "yes" : "no"));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string work_dir = "acceptance_work";
  app.add_option("--work-dir", work_dir, "Directory for checkpoints and CSVs");
  CLI11_PARSE(app, argc, argv);
  const fs::path work(work_dir);
  fs::create_directories(work);

  const ncal::RunConfig desk = ncal::parse_config(kDeskConfig);
  const ncal::Datasets data = ncal::make_datasets(desk);

  Clock total;
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4(data.eval, desk.system);
  criterion_5();
  const DeskResult trained = criterion_6(desk, data, work);
  criterion_7(desk, data, trained);
  criterion_8(work);

  const auto failed = std::count_if(g_outcomes.begin(), g_outcomes.end(), [](const Outcome& o) { return !o.passed; });
  std::printf("acceptance: %zu checks, %ld failed, %.1f s total\n", g_outcomes.size(), static_cast<long>(failed),
              total.seconds());
  return failed == 0 ? 0 : 1;
}
