#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pqda/cli.hpp"
#include "pqda/errors.hpp"

using namespace pqda;

int main(int argc, char** argv) {
  CLI::App app{"Prequential posterior data assimilation runner"};
  app.require_subcommand(1);

  std::string config_path, out, test_range;
  std::uint64_t seed = 0;
  std::vector<std::string> overrides;
  cli::RunOptions opts;
  std::size_t stop_after = 0;
  bool serial = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Config file of key = value lines");
    sub->add_option("--seed", seed, "Override the experiment seed");
    sub->add_option("--out", out, "Output directory");
    sub->add_option("--set", overrides, "Extra key=value assignments applied after the config file");
    sub->add_option("--test-range", test_range, "Diagnostics range")->check(CLI::IsMember({"next-episode", "holdout"}));
    sub->add_flag("--force", opts.force, "Overwrite existing outputs");
    sub->add_flag("--serial", serial, "Run the serial reference path");
  };

  auto* simulate = app.add_subcommand("simulate", "Generate the Lorenz-96 dataset");
  auto* assimilate = app.add_subcommand("assimilate", "Run episodic SMC assimilation");
  auto* enkf = app.add_subcommand("enkf", "Run the EnKF baseline");
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate the latest checkpoint on the holdout range");
  for (auto* sub : {simulate, assimilate, enkf, evaluate}) add_common(sub);
  assimilate->add_flag("--resume", opts.resume, "Continue from the latest checkpoint");
  assimilate->add_option("--stop-after", stop_after, "Stop after this many episodes")->group("");

  auto* plot = app.add_subcommand("plot", "Render metrics CSVs as a three-panel SVG");
  std::vector<std::string> csvs, labels;
  std::string svg_out = "metrics.svg";
  plot->add_option("csv", csvs, "Metrics CSV files")->required();
  plot->add_option("-o,--output", svg_out, "SVG file to write");
  plot->add_option("--label", labels, "Legend label per CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::exit_ok : cli::exit_usage;
  }

  try {
    if (plot->parsed()) {
      std::vector<cli::fs::path> paths(csvs.begin(), csvs.end());
      cli::cmd_plot(paths, svg_out, labels);
      return cli::exit_ok;
    }
    cli::ExperimentConfig cfg = config_path.empty() ? cli::ExperimentConfig{} : cli::load_config(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw cli::ConfigError("--set expects key=value, got '" + kv + "'");
      cli::set_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed != 0) cfg.seed = seed;
    if (!out.empty()) cfg.out = out;
    if (!test_range.empty()) cfg.diagnostics.test_range = cli::parse_test_range(test_range);
    if (serial) opts.exec = Execution::serial;
    if (stop_after > 0) opts.stop_after = stop_after;

    if (simulate->parsed()) {
      std::printf("%s\n", cli::cmd_simulate(cfg, opts).string().c_str());
    } else if (assimilate->parsed()) {
      const auto rows = cli::cmd_assimilate(cfg, opts);
      std::printf("%zu episodes evaluated; metrics in %s/metrics.csv\n", rows.size(), cfg.out.c_str());
    } else if (enkf->parsed()) {
      const auto rows = cli::cmd_enkf(cfg, opts);
      std::printf("%zu episodes evaluated; metrics in %s/enkf_metrics.csv\n", rows.size(), cfg.out.c_str());
    } else if (evaluate->parsed()) {
      const auto row = cli::cmd_evaluate(cfg, opts);
      std::printf("calibration_error %.6g nrmse %.6g r2 %.6g\n", row.calibration_error, row.nrmse, row.r2);
    }
    return cli::exit_ok;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return cli::exit_numerical;
  } catch (const IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return cli::exit_io;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return cli::exit_io;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return cli::exit_usage;
  }
}
