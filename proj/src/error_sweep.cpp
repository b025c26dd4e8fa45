#include "addint/error_sweep.hpp"

#include <cmath>
#include <iomanip>
#include <random>
#include <stdexcept>

#include "addint/bfloat16.hpp"
#include "addint/kernels.hpp"

namespace addint {

namespace {

double log_domain_value(float x) {
  return std::ldexp(static_cast<double>(int64_t{magnitude_bits(x)} - int64_t{kBias32}), -23);
}

}  // namespace

SweepSummary run_error_sweep(const SweepOptions& opt, std::ostream* csv) {
  if (opt.resolution < 16) throw std::invalid_argument("sweep: resolution must be >= 16");
  const bool bf16 = opt.format == MulFormat::BF16;
  const int64_t gamma_off = detail::gamma_offset(opt.gamma_multiplier, bf16 ? kMantBits16 : kMantBits32);

  SweepSummary s;
  s.resolution = opt.resolution;
  s.gamma_multiplier = opt.gamma_multiplier;
  s.format = bf16 ? "bf16" : "fp32";

  if (csv) {
    *csv << std::setprecision(9);
    *csv << "i,j,a,b,product,plain,gamma,rel_err_true,rel_err_approx\n";
  }

  const int r = opt.resolution;
  double rel_sum = 0.0;
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < r; ++j) {
      float a = 1.0f + static_cast<float>(i) / static_cast<float>(r);
      float b = 1.0f + static_cast<float>(j) / static_cast<float>(r);
      float plain, gamma;
      if (bf16) {
        uint16_t a16 = round_bf16(a), b16 = round_bf16(b);
        a = bf16_to_float(a16);
        b = bf16_to_float(b16);
        plain = bf16_to_float(detail::mul_bits16(a16, b16, 0));
        gamma = bf16_to_float(detail::mul_bits16(a16, b16, gamma_off));
      } else {
        plain = float_of(detail::mul_bits(bits_of(a), bits_of(b), 0));
        gamma = float_of(detail::mul_bits(bits_of(a), bits_of(b), gamma_off));
      }
      double ab = static_cast<double>(a) * static_cast<double>(b);
      double rt = (ab - plain) / ab;
      double ra = (ab - plain) / plain;
      if (plain > ab) s.underestimates = false;
      bool zero_line = (bits_of(a) & kMantMask32) == 0 || (bits_of(b) & kMantMask32) == 0;
      bool equal = static_cast<double>(plain) == ab;  // both sides exact here
      if (equal != zero_line) s.equality_only_on_zero_mantissa = false;
      s.max_rel_true = std::max(s.max_rel_true, rt);
      s.max_rel_approx = std::max(s.max_rel_approx, ra);
      s.gamma_max_abs_rel = std::max(s.gamma_max_abs_rel, std::fabs(ab - gamma) / ab);
      rel_sum += rt;
      if (csv)
        *csv << i << ',' << j << ',' << a << ',' << b << ',' << ab << ',' << plain << ','
             << gamma << ',' << rt << ',' << ra << '\n';
    }
  }
  s.mean_rel_true = rel_sum / (static_cast<double>(r) * r);

  std::mt19937 rng(20260815u);
  const long long samples = 1000000;
  double bias_plain = 0.0, bias_gamma = 0.0;
  for (long long k = 0; k < samples; ++k) {
    float a, b, plain, gamma;
    if (bf16) {
      uint16_t a16 = static_cast<uint16_t>(kBias16 | (rng() & kMantMask16));
      uint16_t b16 = static_cast<uint16_t>(kBias16 | (rng() & kMantMask16));
      a = bf16_to_float(a16);
      b = bf16_to_float(b16);
      plain = bf16_to_float(detail::mul_bits16(a16, b16, 0));
      gamma = bf16_to_float(detail::mul_bits16(a16, b16, gamma_off));
    } else {
      a = float_of(kBias32 | (rng() & kMantMask32));
      b = float_of(kBias32 | (rng() & kMantMask32));
      plain = float_of(detail::mul_bits(bits_of(a), bits_of(b), 0));
      gamma = float_of(detail::mul_bits(bits_of(a), bits_of(b), gamma_off));
    }
    double true_log = std::log2(static_cast<double>(a) * static_cast<double>(b));
    bias_plain += log_domain_value(plain) - true_log;
    bias_gamma += log_domain_value(gamma) - true_log;
  }
  s.mc_samples = samples;
  s.mean_log_bias_plain = bias_plain / static_cast<double>(samples);
  s.mean_log_bias_gamma = bias_gamma / static_cast<double>(samples);

  if (csv) write_sweep_summary(s, *csv);
  return s;
}

void write_sweep_summary(const SweepSummary& s, std::ostream& out) {
  out << std::setprecision(9);
  out << "# resolution=" << s.resolution << " format=" << s.format
      << " gamma_multiplier=" << s.gamma_multiplier << "\n";
  out << "# max_rel_true=" << s.max_rel_true << "\n";
  out << "# max_rel_approx=" << s.max_rel_approx << "\n";
  out << "# mean_rel_true=" << s.mean_rel_true << "\n";
  out << "# underestimates=" << (s.underestimates ? "true" : "false") << "\n";
  out << "# equality_only_on_zero_mantissa="
      << (s.equality_only_on_zero_mantissa ? "true" : "false") << "\n";
  out << "# gamma_max_abs_rel=" << s.gamma_max_abs_rel << "\n";
  out << "# mc_samples=" << s.mc_samples << "\n";
  out << "# mean_log_bias_plain=" << s.mean_log_bias_plain << "\n";
  out << "# mean_log_bias_gamma=" << s.mean_log_bias_gamma << "\n";
}

}  // namespace addint
