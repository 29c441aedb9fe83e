// Command-line front end: gen-data, train, sweep, check-grad, eval.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "ncal/bench.hpp"
#include "ncal/tape.hpp"

namespace {

std::optional<ncal::Primitive> primitive_by_name(const std::string& name) {
  for (int p = 0; p <= static_cast<int>(ncal::Primitive::kSumRate); ++p) {
    const auto prim = static_cast<ncal::Primitive>(p);
    if (ncal::primitive_name(prim) == name) return prim;
  }
  return std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural-calibration beamforming benchmark"};
  app.require_subcommand(1);

  ncal::CliOptions opts;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::string corrupt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config_path, "Config file (key = value lines)");
    sub->add_option("--out", out_dir, "Output directory (overrides out_dir)");
    sub->add_option("--seed", seed, "Model seed (overrides seed)");
    sub->add_flag("--deterministic", opts.deterministic, "Request reproducible output");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate train/eval channel datasets");
  add_common(gen);
  auto* train = app.add_subcommand("train", "Train the neural-calibration model");
  add_common(train);
  train->add_option("--checkpoint", opts.checkpoint, "Resume from this checkpoint");
  auto* sweep = app.add_subcommand("sweep", "Compare all methods along one axis");
  add_common(sweep);
  sweep->add_option("--axis", opts.axis, "antennas | users | ulpower")->required();
  sweep->add_option("--values", opts.values, "Comma-separated axis values")->required();
  sweep->add_option("--checkpoint", opts.checkpoint, "Model evaluated by the ulpower sweep");
  auto* check = app.add_subcommand("check-grad", "Run the finite-difference gradient suites");
  add_common(check);
  check->add_option("--corrupt-adjoint", corrupt, "Test hook: perturb one primitive's adjoint")
      ->group("");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the eval set");
  add_common(eval);
  eval->add_option("--checkpoint", opts.checkpoint, "Checkpoint to evaluate")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ncal::kExitOk : ncal::kExitUsage;
  }

  for (CLI::App* sub : app.get_subcommands()) {
    opts.command = sub->get_name();
    if (sub->count("--out") > 0) opts.out_dir = out_dir;
    if (sub->count("--seed") > 0) opts.seed = seed;
  }
  if (!corrupt.empty()) {
    const auto prim = primitive_by_name(corrupt);
    if (!prim) {
      std::cerr << "unknown primitive '" << corrupt << "'\n";
      return ncal::kExitUsage;
    }
    ncal::set_corrupted_adjoint(prim);
  }
  return ncal::run_command(opts, std::cout, std::cerr);
}
