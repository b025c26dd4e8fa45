#pragma once

// Multiplication replaced by integer addition of float bit patterns:
// int_mul(a,b) reinterprets the operands as integers, adds them, and
// subtracts the exponent bias. Equivalently e(l(a)+l(b)) for the
// piecewise-linear pseudo-log l and pseudo-exp e. The e_* family treats
// that as an exact operation with exact piecewise derivatives; the a_*
// family adds a gamma offset in the log domain to cancel the average
// underestimation and approximates gradients the same way.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>

#include "addint/float_bits.hpp"

namespace addint {

// Mean gap between log2(x) and l(x) over one octave: 3/2 - 1/ln 2.
inline constexpr double kGamma = 1.5 - std::numbers::log2e;
inline constexpr float kGammaF = static_cast<float>(kGamma);
// kGamma rounded to 23 (respectively 7) fractional bits.
inline constexpr int64_t kGammaFixed32 = 480709;
inline constexpr int64_t kGammaFixed16 = 7;
static_assert(kGammaFixed32 == static_cast<int64_t>(kGamma * 8388608.0 + 0.5));
static_assert(kGammaFixed16 == static_cast<int64_t>(kGamma * 128.0 + 0.5));

namespace detail {

inline void require_finite(float x, const char* msg) {
  if (!std::isfinite(x)) throw std::domain_error(msg);
}

// Log-domain add on magnitudes with XOR sign and the family's clamping.
// offset shifts the sum (0 for the exact op, +gamma_fixed for a_mult).
// max_mag is the saturation magnitude (smaller for bf16-aligned values).
inline uint32_t mul_bits(uint32_t a, uint32_t b, int64_t offset,
                         uint32_t max_mag = kMaxFinite32) noexcept {
  uint32_t sign = (a ^ b) & kSignMask32;
  int64_t am = a & ~kSignMask32;
  int64_t bm = b & ~kSignMask32;
  if (am < int64_t{kMinNormal32} || bm < int64_t{kMinNormal32}) return sign;
  int64_t q = am + bm - int64_t{kBias32} + offset;
  if (q < int64_t{kMinNormal32}) return sign;
  if (q > int64_t{max_mag}) return sign | max_mag;
  return sign | static_cast<uint32_t>(q);
}

// Log-domain subtract; b must not be pseudo-zero (callers check or accept
// saturation). a pseudo-zero stays signed zero.
inline uint32_t div_bits(uint32_t a, uint32_t b, int64_t offset,
                         uint32_t max_mag = kMaxFinite32) noexcept {
  uint32_t sign = (a ^ b) & kSignMask32;
  int64_t am = a & ~kSignMask32;
  int64_t bm = b & ~kSignMask32;
  if (am < int64_t{kMinNormal32}) return sign;
  if (bm < int64_t{kMinNormal32}) return sign | max_mag;
  int64_t q = am - bm + int64_t{kBias32} + offset;
  if (q < int64_t{kMinNormal32}) return sign;
  if (q > int64_t{max_mag}) return sign | max_mag;
  return sign | static_cast<uint32_t>(q);
}

// gamma * multiplier at the given fixed-point resolution.
inline int64_t gamma_offset(double multiplier, int frac_bits) {
  return std::llround(kGamma * multiplier * std::ldexp(1.0, frac_bits));
}

}  // namespace detail

// ---- real-valued references (oracles, double arithmetic, no bit tricks) ----

// l(x) = x-1 on [1,2), l(2x) = l(x)+1.
inline double l_ref(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) throw std::domain_error("l_ref: requires x > 0");
  int e;
  double m = std::frexp(x, &e);  // x = m * 2^e, m in [0.5, 1)
  return (e - 1) + (2.0 * m - 1.0);
}

// e(x) = 1+x on [0,1), e(x+1) = 2 e(x). Exact inverse of l_ref.
inline double e_ref(double x) {
  if (!std::isfinite(x)) throw std::domain_error("e_ref: non-finite input");
  double k = std::floor(x);
  return std::ldexp(1.0 + (x - k), static_cast<int>(k));
}

// ---- log-domain views ----

inline int64_t to_log_domain(float x) {
  if (!(x > 0.0f) || !std::isfinite(x) || is_pseudo_zero(x))
    throw std::domain_error("to_log_domain: requires positive normal input");
  return detail::to_q(x);
}

inline float from_log_domain(int64_t q) { return detail::from_q(q); }

// ---- the operation family ----

inline float int_mul(float a, float b) {
  detail::require_finite(a, "int_mul: non-finite input");
  detail::require_finite(b, "int_mul: non-finite input");
  return float_of(detail::mul_bits(bits_of(a), bits_of(b), 0));
}

inline float e_div(float a, float b) {
  detail::require_finite(a, "e_div: non-finite input");
  detail::require_finite(b, "e_div: non-finite input");
  if (is_pseudo_zero(b)) throw std::domain_error("e_div: division by zero");
  return float_of(detail::div_bits(bits_of(a), bits_of(b), 0));
}

// Fixed-point halving of l(x), rounding toward negative infinity.
inline float e_sqrt(float x) {
  detail::require_finite(x, "e_sqrt: non-finite input");
  if (is_pseudo_zero(x)) return 0.0f;
  if (std::signbit(x)) throw std::domain_error("e_sqrt: negative input");
  return detail::from_q(detail::to_q(x) >> 1);
}

inline float e_exp2(float x) {
  detail::require_finite(x, "e_exp2: non-finite input");
  if (x >= 256.0f) return float_of(kMaxFinite32);
  if (x <= -256.0f) return 0.0f;
  // x * 2^23 is exact in double; round the fixed point to nearest even.
  return detail::from_q(std::llrint(std::ldexp(static_cast<double>(x), kMantBits32)));
}

inline float e_log2(float x) {
  if (!(x > 0.0f) || !std::isfinite(x) || is_pseudo_zero(x))
    throw std::domain_error("e_log2: requires positive normal input");
  return std::ldexp(static_cast<float>(detail::to_q(x)), -kMantBits32);
}

inline float a_mult(float a, float b) {
  detail::require_finite(a, "a_mult: non-finite input");
  detail::require_finite(b, "a_mult: non-finite input");
  return float_of(detail::mul_bits(bits_of(a), bits_of(b), kGammaFixed32));
}

inline float a_div(float a, float b) {
  detail::require_finite(a, "a_div: non-finite input");
  detail::require_finite(b, "a_div: non-finite input");
  if (is_pseudo_zero(b)) throw std::domain_error("a_div: division by zero");
  return float_of(detail::div_bits(bits_of(a), bits_of(b), -kGammaFixed32));
}

inline float a_exp2(float x) { return e_exp2(x + kGammaF); }

inline float a_log2(float x) { return e_log2(x) + kGammaF; }

// ---- derivatives ----

// 2^floor(x): the slope of e on the linear piece containing x
// (right-continuous at integer kinks; mantissa-zeroing semantics).
inline float e_prime(float x) {
  detail::require_finite(x, "e_prime: non-finite input");
  double k = std::floor(static_cast<double>(x));
  if (k > 300.0) k = 300.0;
  if (k < -300.0) k = -300.0;
  return detail::from_q(static_cast<int64_t>(k) << kMantBits32);
}

// 2^-floor(log2 x): the slope of l on the octave containing x.
inline float l_prime(float x) {
  if (!(x > 0.0f) || !std::isfinite(x) || is_pseudo_zero(x))
    throw std::domain_error("l_prime: requires positive normal input");
  uint32_t eb = bits_of(x) >> kMantBits32;  // biased exponent, sign known 0
  if (eb >= 254u) return 0.0f;              // slope 2^-127 underflows
  return float_of((254u - eb) << kMantBits32);
}

struct Grad2 {
  float da;
  float db;
};

namespace detail {

// Sentinel far enough below the normal range that any bounded offset still
// clamps to zero.
inline constexpr int64_t kZeroMag = int64_t{-1} << 40;

// Magnitude bits of da = upstream * e'(l(a)+l(b)) * l'(|a|), fused in the
// integer domain. Both slope factors are powers of two, so this equals the
// int_mul composition wherever no intermediate clamp occurs. up_mag is the
// magnitude bits of the upstream (kZeroMag when pseudo-zero), a_mag the
// magnitude bits of a with pseudo-zero remapped to bias (the a->0 limit
// slope is the co-operand's mantissa-zeroed octave), b_prime = magnitude
// bits of b minus bias (kZeroMag when pseudo-zero; the forward is then
// constant in a and the gradient vanishes).
inline uint32_t d_e_mult_mag(int64_t up_mag, int64_t a_mag, int64_t b_prime,
                             uint32_t max_mag = kMaxFinite32) noexcept {
  constexpr int64_t kFloor = ~int64_t{kMantMask32};
  int64_t q = up_mag + ((a_mag + b_prime) & kFloor) - (a_mag & kFloor);
  if (q < int64_t{kMinNormal32}) return 0;
  if (q > int64_t{max_mag}) return max_mag;
  return static_cast<uint32_t>(q);
}

inline int64_t grad_self_mag(float x) {
  return is_pseudo_zero(x) ? int64_t{kBias32} : int64_t{magnitude_bits(x)};
}

inline int64_t grad_co_mag(float x) {
  return is_pseudo_zero(x) ? kZeroMag : int64_t{magnitude_bits(x)} - int64_t{kBias32};
}

}  // namespace detail

// Backward of int_mul: da = upstream * e'(l(a)+l(b)) * l'(|a|) with
// sign(da) = sign(upstream) XOR sign(b), and symmetrically for db.
inline Grad2 d_e_mult(float a, float b, float upstream) {
  detail::require_finite(a, "d_e_mult: non-finite input");
  detail::require_finite(b, "d_e_mult: non-finite input");
  detail::require_finite(upstream, "d_e_mult: non-finite input");
  int64_t up = is_pseudo_zero(upstream) ? detail::kZeroMag : int64_t{magnitude_bits(upstream)};
  uint32_t us = sign_bit(upstream);
  Grad2 g;
  g.da = float_of(detail::d_e_mult_mag(up, detail::grad_self_mag(a), detail::grad_co_mag(b)) |
                  (us ^ sign_bit(b)));
  g.db = float_of(detail::d_e_mult_mag(up, detail::grad_self_mag(b), detail::grad_co_mag(a)) |
                  (us ^ sign_bit(a)));
  return g;
}

}  // namespace addint
