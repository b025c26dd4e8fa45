#pragma once

// Software bfloat16 (1+8+7): values live in the top 16 bits of a float32
// pattern. The kernel family carries over unchanged with bias 0x3F80 and a
// 7-fractional-bit log domain.

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "addint/float_bits.hpp"
#include "addint/kernels.hpp"

namespace addint {

inline constexpr uint16_t kSignMask16 = 0x8000u;
inline constexpr uint16_t kExpMask16 = 0x7F80u;
inline constexpr uint16_t kMantMask16 = 0x007Fu;
inline constexpr uint16_t kBias16 = 0x3F80u;  // bits of 1.0
inline constexpr uint16_t kMinNormal16 = 0x0080u;
inline constexpr uint16_t kMaxFinite16 = 0x7F7Fu;
inline constexpr int kMantBits16 = 7;

inline float bf16_to_float(uint16_t b) { return float_of(uint32_t{b} << 16); }

// Round to nearest, ties to even, on the 16 dropped bits. Magnitudes past
// the largest finite bf16 saturate rather than producing an infinity.
inline uint16_t round_bf16(float x) {
  if (std::isnan(x)) throw std::domain_error("round_bf16: NaN input");
  uint32_t u = bits_of(x);
  uint32_t sign = u & kSignMask32;
  uint32_t mag = u & ~kSignMask32;
  if (mag >= 0x7F7F8000u) return static_cast<uint16_t>((sign >> 16) | kMaxFinite16);
  mag += 0x7FFFu + ((mag >> 16) & 1u);
  return static_cast<uint16_t>((sign | mag) >> 16);
}

// Truncation variant, kept for ablation runs.
inline uint16_t truncate_bf16(float x) {
  if (std::isnan(x)) throw std::domain_error("truncate_bf16: NaN input");
  return static_cast<uint16_t>(bits_of(x) >> 16);
}

// Round a float to the bf16 grid but keep it widened.
inline float snap_bf16(float x) { return bf16_to_float(round_bf16(x)); }

namespace detail {

inline uint16_t mul_bits16(uint16_t a, uint16_t b, int64_t offset) noexcept {
  uint16_t sign = (a ^ b) & kSignMask16;
  int64_t am = a & ~kSignMask16;
  int64_t bm = b & ~kSignMask16;
  if (am < int64_t{kMinNormal16} || bm < int64_t{kMinNormal16}) return sign;
  int64_t q = am + bm - int64_t{kBias16} + offset;
  if (q < int64_t{kMinNormal16}) return sign;
  if (q > int64_t{kMaxFinite16}) return sign | kMaxFinite16;
  return sign | static_cast<uint16_t>(q);
}

inline uint16_t div_bits16(uint16_t a, uint16_t b, int64_t offset) noexcept {
  uint16_t sign = (a ^ b) & kSignMask16;
  int64_t am = a & ~kSignMask16;
  int64_t bm = b & ~kSignMask16;
  if (am < int64_t{kMinNormal16}) return sign;
  if (bm < int64_t{kMinNormal16}) return sign | kMaxFinite16;
  int64_t q = am - bm + int64_t{kBias16} + offset;
  if (q < int64_t{kMinNormal16}) return sign;
  if (q > int64_t{kMaxFinite16}) return sign | kMaxFinite16;
  return sign | static_cast<uint16_t>(q);
}

inline void require_finite16(uint16_t b, const char* msg) {
  if ((b & kExpMask16) == kExpMask16) throw std::domain_error(msg);
}

}  // namespace detail

inline uint16_t int_mul_bf16(uint16_t a, uint16_t b) {
  detail::require_finite16(a, "int_mul_bf16: non-finite input");
  detail::require_finite16(b, "int_mul_bf16: non-finite input");
  return detail::mul_bits16(a, b, 0);
}

inline uint16_t a_mult_bf16(uint16_t a, uint16_t b) {
  detail::require_finite16(a, "a_mult_bf16: non-finite input");
  detail::require_finite16(b, "a_mult_bf16: non-finite input");
  return detail::mul_bits16(a, b, kGammaFixed16);
}

inline uint16_t e_div_bf16(uint16_t a, uint16_t b) {
  detail::require_finite16(a, "e_div_bf16: non-finite input");
  detail::require_finite16(b, "e_div_bf16: non-finite input");
  if ((b & ~kSignMask16) < kMinNormal16) throw std::domain_error("e_div_bf16: division by zero");
  return detail::div_bits16(a, b, 0);
}

}  // namespace addint
