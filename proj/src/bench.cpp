#include "ncal/bench.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "ncal/binary_io.hpp"
#include "ncal/gradcheck.hpp"
#include "ncal/rng.hpp"

namespace ncal {

namespace fs = std::filesystem;

namespace {

constexpr const char* kTrainFile = "train.ncch";
constexpr const char* kEvalFile = "eval.ncch";
constexpr const char* kModelFile = "model.ncbf";
constexpr const char* kReportFile = "train_report.csv";

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

fs::path ensure_out_dir(const RunConfig& cfg) {
  const fs::path dir(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

std::string hash_hex(const RunConfig& cfg) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(cfg.hash()));
  return buf;
}

RunConfig with_users(RunConfig cfg, std::size_t k) {
  cfg.system.k_users = k;
  if (!cfg.pilot_len_set) cfg.system.pilot_len = k;
  cfg.system.validate();
  return cfg;
}

std::size_t as_count(double v, const std::string& axis) {
  if (!(v >= 1.0) || v != static_cast<double>(static_cast<std::size_t>(v))) {
    throw ConfigError("--values for axis '" + axis + "' must be positive integers");
  }
  return static_cast<std::size_t>(v);
}

TrainOptions train_options(const RunConfig& cfg, std::ostream* log, const std::string& tag) {
  TrainOptions t;
  t.epochs = cfg.epochs;
  t.batch_size = cfg.batch_size;
  t.lr = cfg.lr;
  t.seed = cfg.seed;
  t.eval_seed = cfg.eval_seed;
  if (log != nullptr) {
    t.on_epoch = [log, tag](std::size_t epoch, double loss, double rate) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "[%s] epoch %zu loss %.6f eval_rate_bits %.6f\n", tag.c_str(),
                    epoch, loss, rate);
      *log << buf << std::flush;
    };
  }
  return t;
}

struct TrainedBaselines {
  NeuralCalibModel blackbox;
  BlockByBlockModel block_by_block;
};

TrainedBaselines train_baselines(const RunConfig& cfg, const Datasets& data, std::ostream* log) {
  NeuralCalibModel bb = NeuralCalibModel::create(
      cfg.system, blackbox_hidden_for_budget(cfg.system, cfg.hidden), cfg.seed,
      Architecture::kBlackbox);
  TrainOptions t = train_options(cfg, log, "blackbox");
  t.evaluate_each_epoch = false;
  train(bb, data.train, data.eval, t);
  BlockByBlockModel bbb =
      train_block_by_block(cfg.system, data.train, cfg.hidden, train_options(cfg, log, "block_by_block"));
  return {std::move(bb), std::move(bbb)};
}

NeuralCalibModel train_neural(const RunConfig& cfg, const Datasets& data, std::ostream* log) {
  NeuralCalibModel model = NeuralCalibModel::create(cfg.system, cfg.hidden, cfg.seed,
                                                    Architecture::kCalibrated, cfg.residual);
  TrainOptions t = train_options(cfg, log, "neural_calib");
  t.evaluate_each_epoch = log != nullptr;
  train(model, data.train, data.eval, t);
  return model;
}

Datasets load_or_make(const RunConfig& cfg) {
  const fs::path dir(cfg.out_dir);
  if (!fs::exists(dir / kTrainFile) || !fs::exists(dir / kEvalFile)) return make_datasets(cfg);
  Datasets out;
  for (auto [file, dst] : {std::pair{kTrainFile, &out.train}, std::pair{kEvalFile, &out.eval}}) {
    Dataset ds = load_dataset((dir / file).string());
    if (ds.cfg.m_antennas != cfg.system.m_antennas || ds.cfg.k_users != cfg.system.k_users) {
      throw DimensionMismatch("dataset " + (dir / file).string() + " has M=" +
                              std::to_string(ds.cfg.m_antennas) + " K=" +
                              std::to_string(ds.cfg.k_users) + " but the config has M=" +
                              std::to_string(cfg.system.m_antennas) + " K=" +
                              std::to_string(cfg.system.k_users));
    }
    *dst = std::move(ds.samples);
  }
  return out;
}

}  // namespace

RunConfig resolve_config(const CliOptions& opts) {
  RunConfig cfg;
  if (!opts.config_path.empty()) {
    cfg = load_config(opts.config_path);
  } else if (opts.command != "check-grad") {
    throw ConfigError("--config is required for '" + opts.command + "'");
  }
  if (opts.out_dir) cfg.out_dir = *opts.out_dir;
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.deterministic) cfg.deterministic = true;
  return cfg;
}

Datasets make_datasets(const RunConfig& cfg) {
  return {gen_dataset(cfg.system, cfg.n_train, derive_seed(cfg.data_seed, {1})),
          gen_dataset(cfg.system, cfg.n_eval, derive_seed(cfg.data_seed, {2}))};
}

const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names{"wmmse_csit", "zf_csit", "neural_calib", "blackbox",
                                              "block_by_block"};
  return names;
}

ResultRow make_row(const std::string& method, const RunConfig& cfg,
                   const std::vector<double>& rates) {
  return {method,
          cfg.system.m_antennas,
          cfg.system.k_users,
          cfg.system.pilot_len,
          cfg.p_ul_dbm,
          cfg.p_dl_dbm,
          mean(rates),
          stddev(rates),
          rates.size(),
          cfg.seed};
}

std::vector<ResultRow> run_point(const RunConfig& cfg, const Datasets& data, std::ostream* log) {
  std::vector<ResultRow> rows;
  rows.push_back(make_row("wmmse_csit", cfg, perfect_csit_rates(data.eval, cfg.system, CsitMethod::kWmmse)));
  rows.push_back(make_row("zf_csit", cfg, perfect_csit_rates(data.eval, cfg.system, CsitMethod::kZf)));
  const NeuralCalibModel model = train_neural(cfg, data, log);
  rows.push_back(make_row("neural_calib", cfg, evaluate_model(model, data.eval, cfg.eval_seed)));
  const TrainedBaselines base = train_baselines(cfg, data, log);
  rows.push_back(make_row("blackbox", cfg, evaluate_model(base.blackbox, data.eval, cfg.eval_seed)));
  rows.push_back(make_row("block_by_block", cfg,
                          evaluate_block_by_block(base.block_by_block, data.eval, cfg.eval_seed)));
  return rows;
}

std::vector<ResultRow> run_sweep(const RunConfig& cfg, const std::string& axis,
                                 const std::vector<double>& values,
                                 const std::optional<NeuralCalibModel>& model, std::ostream* log) {
  if (values.empty()) throw ConfigError("--values must list at least one point");
  std::vector<ResultRow> rows;
  if (axis == "antennas" || axis == "users") {
    for (double v : values) {
      RunConfig point = cfg;
      if (axis == "antennas") {
        point.system.m_antennas = as_count(v, axis);
        point.system.validate();
      } else {
        point = with_users(cfg, as_count(v, axis));
      }
      if (log != nullptr) *log << "sweep " << axis << " = " << format_number(v) << "\n";
      const auto point_rows = run_point(point, make_datasets(point), log);
      rows.insert(rows.end(), point_rows.begin(), point_rows.end());
    }
    return rows;
  }
  if (axis != "ulpower") throw ConfigError("unknown axis '" + axis + "' (antennas|users|ulpower)");

  // Mismatch protocol: every learned model is trained once at the configured
  // uplink power and only evaluated at the test powers.
  const Datasets data = make_datasets(cfg);
  const NeuralCalibModel neural = model ? *model : train_neural(cfg, data, log);
  const TrainedBaselines base = train_baselines(cfg, data, log);
  const auto wmmse = perfect_csit_rates(data.eval, cfg.system, CsitMethod::kWmmse);
  const auto zf = perfect_csit_rates(data.eval, cfg.system, CsitMethod::kZf);
  for (double dbm : values) {
    RunConfig point = cfg;
    point.set_p_ul_dbm(dbm);
    const double p_ul = point.system.p_ul_mw;
    rows.push_back(make_row("wmmse_csit", point, wmmse));
    rows.push_back(make_row("zf_csit", point, zf));
    rows.push_back(make_row("neural_calib", point, evaluate_model(neural, data.eval, cfg.eval_seed, p_ul)));
    rows.push_back(make_row("blackbox", point, evaluate_model(base.blackbox, data.eval, cfg.eval_seed, p_ul)));
    rows.push_back(make_row("block_by_block", point,
                            evaluate_block_by_block(base.block_by_block, data.eval, cfg.eval_seed, p_ul)));
  }
  return rows;
}

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string results_csv(const RunConfig& cfg, const std::vector<ResultRow>& rows) {
  std::string out = cfg.header();
  out += "method,M,K,L,p_ul_dbm,p_dl_dbm,mean_rate_bits,std_rate,n_samples,seed\n";
  for (const ResultRow& r : rows) {
    out += r.method + "," + std::to_string(r.m) + "," + std::to_string(r.k) + "," +
           std::to_string(r.l) + "," + format_number(r.p_ul_dbm) + "," + format_number(r.p_dl_dbm) +
           "," + format_number(r.mean_rate_bits) + "," + format_number(r.std_rate) + "," +
           std::to_string(r.n_samples) + "," + std::to_string(r.seed) + "\n";
  }
  return out;
}

std::string train_report_csv(const RunConfig& cfg, const TrainReport& report,
                             std::size_t first_epoch) {
  std::string out = cfg.header();
  out += "epoch,train_loss_nats,eval_rate_bits\n";
  for (std::size_t i = 0; i < report.train_loss_nats.size(); ++i) {
    out += std::to_string(first_epoch + i) + "," + format_number(report.train_loss_nats[i]) + "," +
           format_number(report.eval_rate_bits[i]) + "\n";
  }
  return out;
}

std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    while (used < item.size() && item[used] == ' ') ++used;
    if (used == 0 || used != item.size()) throw ConfigError("--values: bad number '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("--values must list at least one point");
  return out;
}

namespace {

int cmd_gen_data(const RunConfig& cfg, std::ostream& out) {
  const fs::path dir = ensure_out_dir(cfg);
  const Datasets data = make_datasets(cfg);
  save_dataset((dir / kTrainFile).string(), cfg.system, data.train);
  save_dataset((dir / kEvalFile).string(), cfg.system, data.eval);
  out << cfg.header();
  out << "wrote " << data.train.size() << " train and " << data.eval.size()
      << " eval samples to " << dir.string() << " (config_hash " << hash_hex(cfg) << ")\n";
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, const CliOptions& opts, std::ostream& out, std::ostream& err) {
  const fs::path dir = ensure_out_dir(cfg);
  const Datasets data = load_or_make(cfg);
  NeuralCalibModel model =
      opts.checkpoint.empty()
          ? NeuralCalibModel::create(cfg.system, cfg.hidden, cfg.seed, Architecture::kCalibrated,
                                     cfg.residual)
          : NeuralCalibModel::from_checkpoint(cfg.system, load_checkpoint(opts.checkpoint));
  const std::size_t first_epoch = model.epochs_done;
  if (first_epoch >= cfg.epochs) {
    out << "checkpoint already holds " << first_epoch << " of " << cfg.epochs << " epochs\n";
    return kExitOk;
  }
  TrainOptions t = train_options(cfg, &err, "neural_calib");
  t.epochs = cfg.epochs - first_epoch;
  TrainReport report = train(model, data.train, data.eval, t);
  report.config_hash = cfg.hash();
  save_checkpoint((dir / kModelFile).string(), model.to_checkpoint());
  write_text(dir / kReportFile, train_report_csv(cfg, report, first_epoch));
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "trained epochs %zu..%zu in %.1f s, final eval rate %.6f bits/s/Hz, skipped %zu "
                "(config_hash %s, seed %llu)\n",
                first_epoch, first_epoch + t.epochs - 1, report.wall_clock_s,
                report.eval_rate_bits.back(), report.skipped, hash_hex(cfg).c_str(),
                static_cast<unsigned long long>(cfg.seed));
  out << buf;
  return kExitOk;
}

int cmd_sweep(const RunConfig& cfg, const CliOptions& opts, std::ostream& out, std::ostream& err) {
  if (opts.axis.empty()) throw ConfigError("sweep needs --axis");
  if (opts.values.empty()) throw ConfigError("sweep needs --values");
  const std::vector<double> values = parse_values(opts.values);
  std::optional<NeuralCalibModel> model;
  if (!opts.checkpoint.empty()) {
    if (opts.axis != "ulpower") throw ConfigError("--checkpoint only applies to the ulpower axis");
    model = NeuralCalibModel::from_checkpoint(cfg.system, load_checkpoint(opts.checkpoint));
  }
  const fs::path dir = ensure_out_dir(cfg);
  const auto rows = run_sweep(cfg, opts.axis, values, model, &err);
  const fs::path path = dir / ("sweep_" + opts.axis + ".csv");
  write_text(path, results_csv(cfg, rows));
  out << "wrote " << rows.size() << " rows to " << path.string() << "\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const CliOptions& opts, std::ostream& out) {
  if (opts.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
  const NeuralCalibModel model =
      NeuralCalibModel::from_checkpoint(cfg.system, load_checkpoint(opts.checkpoint));
  const Datasets data = load_or_make(cfg);
  std::vector<ResultRow> rows;
  rows.push_back(make_row("wmmse_csit", cfg, perfect_csit_rates(data.eval, cfg.system, CsitMethod::kWmmse)));
  rows.push_back(make_row("zf_csit", cfg, perfect_csit_rates(data.eval, cfg.system, CsitMethod::kZf)));
  rows.push_back(make_row(model.arch == Architecture::kCalibrated ? "neural_calib" : "blackbox",
                          cfg, evaluate_model(model, data.eval, cfg.eval_seed)));
  const fs::path dir = ensure_out_dir(cfg);
  const std::string csv = results_csv(cfg, rows);
  write_text(dir / "eval.csv", csv);
  out << csv;
  return kExitOk;
}

int cmd_check_grad(const RunConfig& cfg, std::ostream& out) {
  const GradCheckReport report = run_grad_checks(cfg.seed);
  out << format_report(report);
  out << (report.passed() ? "gradient checks passed\n" : "gradient checks FAILED\n");
  return report.passed() ? kExitOk : kExitNumerical;
}

}  // namespace

int run_command(const CliOptions& opts, std::ostream& out, std::ostream& err) {
  try {
    const RunConfig cfg = resolve_config(opts);
    if (opts.command == "gen-data") return cmd_gen_data(cfg, out);
    if (opts.command == "train") return cmd_train(cfg, opts, out, err);
    if (opts.command == "sweep") return cmd_sweep(cfg, opts, out, err);
    if (opts.command == "eval") return cmd_eval(cfg, opts, out);
    if (opts.command == "check-grad") return cmd_check_grad(cfg, out);
    err << "unknown command '" << opts.command << "'\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::ios_base::failure& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  }
}

}  // namespace ncal
