#pragma once

#include <ostream>
#include <string>

#include "addint/autodiff.hpp"

namespace addint {

struct SweepOptions {
  int resolution = 1024;          // grid points per mantissa axis, >= 16
  double gamma_multiplier = 1.0;  // scales the correction used by the gamma column
  MulFormat format = MulFormat::FP32;
};

struct SweepSummary {
  int resolution = 0;
  double gamma_multiplier = 1.0;
  std::string format;
  // mantissa-grid sweep of the plain kernel against the true product
  double max_rel_true = 0.0;    // max (ab - f)/ab
  double max_rel_approx = 0.0;  // max (ab - f)/f
  double mean_rel_true = 0.0;
  bool underestimates = true;   // f <= ab across the grid
  bool equality_only_on_zero_mantissa = true;
  // gamma-corrected kernel against the true product (can overshoot)
  double gamma_max_abs_rel = 0.0;
  // Monte-Carlo log-domain bias over uniform-mantissa pairs
  double mean_log_bias_plain = 0.0;
  double mean_log_bias_gamma = 0.0;
  long long mc_samples = 0;
};

// Sweeps every mantissa pair at shared exponent 0. Writes one CSV row per
// grid cell to `csv` when non-null, then a '#'-prefixed summary block.
SweepSummary run_error_sweep(const SweepOptions& opt, std::ostream* csv);

void write_sweep_summary(const SweepSummary& s, std::ostream& out);

}  // namespace addint
