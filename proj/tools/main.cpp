#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "addint/config.hpp"
#include "addint/error_sweep.hpp"
#include "addint/report.hpp"
#include "addint/train.hpp"

int main(int argc, char** argv) {
  CLI::App app{"addition-as-int training and analysis driver"};
  app.require_subcommand(1);

  std::string config_path, out_path;
  bool fast = false;
  uint64_t seed = 0;
  auto* train = app.add_subcommand("train", "run a training config");
  train->add_option("--config", config_path, "JSON config path")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_flag("--fast", fast, "shrink hidden widths to 256 and cap epochs at 5");
  auto* seed_opt = train->add_option("--seed", seed, "override the config seed");
  train->add_option("--out", out_path, "override the metrics output path");

  int resolution = 1024;
  double gamma_multiplier = 1.0;
  std::string format = "fp32", csv_path;
  auto* sweep = app.add_subcommand("analyze-error", "kernel error characterization sweep");
  sweep->add_option("--resolution", resolution, "grid points per mantissa axis");
  sweep->add_option("--gamma-multiplier", gamma_multiplier, "scale on the gamma correction");
  sweep->add_option("--format", format, "fp32 or bf16")
      ->check(CLI::IsMember({"fp32", "bf16"}));
  sweep->add_option("--out", csv_path, "CSV output path (summary always prints to stdout)");

  std::string metrics_path;
  auto* rep = app.add_subcommand("report", "summarize a metrics JSONL file");
  rep->add_option("path", metrics_path, "metrics JSONL path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      addint::TrainConfig cfg = addint::load_config(config_path);
      if (fast) addint::apply_fast_preset(cfg);
      if (seed_opt->count() > 0) cfg.seed = seed;
      if (!out_path.empty()) cfg.metrics_path = out_path;
      addint::TrainResult res = addint::train_model(cfg, &std::cout);
      std::cout << "final test accuracy " << res.final_test_accuracy << "\n";
    } else if (sweep->parsed()) {
      addint::SweepOptions opt;
      opt.resolution = resolution;
      opt.gamma_multiplier = gamma_multiplier;
      opt.format = addint::mul_format_from_name(format);
      addint::SweepSummary s;
      if (!csv_path.empty()) {
        std::ofstream f(csv_path);
        if (!f) throw std::runtime_error("cannot open " + csv_path);
        s = addint::run_error_sweep(opt, &f);
      } else {
        s = addint::run_error_sweep(opt, nullptr);
      }
      addint::write_sweep_summary(s, std::cout);
    } else if (rep->parsed()) {
      std::cout << addint::report_from_file(metrics_path);
    }
  } catch (const addint::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
