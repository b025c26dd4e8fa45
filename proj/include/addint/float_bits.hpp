#pragma once

#include <bit>
#include <cstdint>

namespace addint {

inline constexpr uint32_t kSignMask32 = 0x80000000u;
inline constexpr uint32_t kExpMask32 = 0x7F800000u;
inline constexpr uint32_t kMantMask32 = 0x007FFFFFu;
inline constexpr uint32_t kBias32 = 0x3F800000u;  // bits of 1.0f
inline constexpr uint32_t kMinNormal32 = 0x00800000u;
inline constexpr uint32_t kMaxFinite32 = 0x7F7FFFFFu;
inline constexpr int kMantBits32 = 23;

inline uint32_t bits_of(float x) { return std::bit_cast<uint32_t>(x); }
inline float float_of(uint32_t b) { return std::bit_cast<float>(b); }

inline uint32_t sign_bit(float x) { return bits_of(x) & kSignMask32; }
inline uint32_t magnitude_bits(float x) { return bits_of(x) & ~kSignMask32; }

// Subnormals count as zero everywhere in this arithmetic.
inline bool is_pseudo_zero(float x) { return magnitude_bits(x) < kMinNormal32; }

namespace detail {

// Raw log-domain view: q = bits(|x|) - bias, a fixed-point number with 23
// fractional bits. Valid only for normal x; callers check.
inline int64_t to_q(float x) {
  return int64_t{magnitude_bits(x)} - int64_t{kBias32};
}

// Return trip with the family's clamping: q below the normal range rounds
// to +0, above it saturates to the given largest finite magnitude.
inline float from_q(int64_t q, uint32_t max_mag = kMaxFinite32) {
  int64_t b = q + int64_t{kBias32};
  if (b < int64_t{kMinNormal32}) return 0.0f;
  if (b > int64_t{max_mag}) return float_of(max_mag);
  return float_of(static_cast<uint32_t>(b));
}

}  // namespace detail
}  // namespace addint
