#ifndef NCAL_BENCH_HPP_
#define NCAL_BENCH_HPP_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ncal/channel.hpp"
#include "ncal/config.hpp"
#include "ncal/pipeline.hpp"

namespace ncal {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitNumerical = 2, kExitIo = 3 };

struct CliOptions {
  std::string command;  // gen-data | train | sweep | check-grad | eval
  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string checkpoint;
  std::string axis;    // antennas | users | ulpower
  std::string values;  // comma-separated
};

/// Config file plus command-line overrides. check-grad needs no file.
RunConfig resolve_config(const CliOptions& opts);

struct Datasets {
  std::vector<ChannelPair> train;
  std::vector<ChannelPair> eval;
};

/// Train and eval sets derived from data_seed; independent of the model seed.
Datasets make_datasets(const RunConfig& cfg);

struct ResultRow {
  std::string method;
  std::size_t m = 0;
  std::size_t k = 0;
  std::size_t l = 0;
  double p_ul_dbm = 0.0;
  double p_dl_dbm = 0.0;
  double mean_rate_bits = 0.0;
  double std_rate = 0.0;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
};

/// Method names in output order.
const std::vector<std::string>& method_names();

ResultRow make_row(const std::string& method, const RunConfig& cfg, const std::vector<double>& rates);

/// Trains every learned method on one config and evaluates all five on the
/// shared eval set. log may be null.
std::vector<ResultRow> run_point(const RunConfig& cfg, const Datasets& data, std::ostream* log);

/// antennas and users retrain per point; ulpower evaluates one set of
/// trained models at every test power. A provided model replaces the
/// neural_calib training for ulpower.
std::vector<ResultRow> run_sweep(const RunConfig& cfg, const std::string& axis,
                                 const std::vector<double>& values,
                                 const std::optional<NeuralCalibModel>& model, std::ostream* log);

std::string format_number(double v);
std::string results_csv(const RunConfig& cfg, const std::vector<ResultRow>& rows);
std::string train_report_csv(const RunConfig& cfg, const TrainReport& report,
                             std::size_t first_epoch);

std::vector<double> parse_values(const std::string& csv);

/// Runs one subcommand; maps failures onto ExitCode.
int run_command(const CliOptions& opts, std::ostream& out, std::ostream& err);

}  // namespace ncal

#endif  // NCAL_BENCH_HPP_
