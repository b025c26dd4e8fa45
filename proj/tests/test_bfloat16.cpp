#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <random>

#include "addint/bfloat16.hpp"
#include "addint/kernels.hpp"

using namespace addint;

namespace {

float rand_float(std::mt19937& g, int emin, int emax, bool allow_negative = true) {
  std::uniform_int_distribution<int> de(emin, emax);
  std::uniform_int_distribution<uint32_t> dm(0, kMantMask32);
  uint32_t bits = (static_cast<uint32_t>(de(g) + 127) << kMantBits32) | dm(g);
  if (allow_negative && (g() & 1u)) bits |= kSignMask32;
  return float_of(bits);
}

}  // namespace

TEST_CASE("widening places the pattern in the float32 high half") {
  CHECK(bf16_to_float(0x3F80) == 1.0f);
  CHECK(bf16_to_float(0x3FC0) == 1.5f);
  CHECK(bf16_to_float(0x4000) == 2.0f);
  CHECK(bf16_to_float(0xC040) == -3.0f);
  CHECK(bf16_to_float(0x0000) == 0.0f);
  CHECK(bits_of(bf16_to_float(0x8000)) == kSignMask32);
}

TEST_CASE("rounding is nearest with ties to even") {
  CHECK(round_bf16(1.0f) == 0x3F80);
  CHECK(round_bf16(-1.5f) == 0xBFC0);
  // 1 + 2^-8 sits exactly between mantissa 0 and 1: tie goes to even (0)
  CHECK(round_bf16(1.00390625f) == 0x3F80);
  CHECK(bf16_to_float(round_bf16(1.00390625f)) == 1.0f);
  // 1 + 3*2^-8 sits between mantissa 1 and 2: tie goes to even (2)
  CHECK(round_bf16(1.01171875f) == 0x3F82);
  // just past the tie rounds up
  CHECK(round_bf16(1.0040f) == 0x3F81);
  CHECK(round_bf16(0.0f) == 0x0000);
  CHECK(round_bf16(-0.0f) == 0x8000);
}

TEST_CASE("rounding saturates instead of overflowing to infinity") {
  CHECK(round_bf16(3.4e38f) == kMaxFinite16);
  CHECK(round_bf16(-3.4e38f) == (kSignMask16 | kMaxFinite16));
  CHECK(round_bf16(INFINITY) == kMaxFinite16);
  CHECK(round_bf16(-INFINITY) == (kSignMask16 | kMaxFinite16));
  CHECK_THROWS_AS(round_bf16(NAN), std::domain_error);
  CHECK_THROWS_AS(truncate_bf16(NAN), std::domain_error);
}

TEST_CASE("every finite bf16 pattern survives a round trip") {
  for (uint32_t b = 0; b <= 0xFFFFu; ++b) {
    uint16_t p = static_cast<uint16_t>(b);
    if ((p & kExpMask16) == kExpMask16) continue;  // inf/NaN patterns
    CHECK(round_bf16(bf16_to_float(p)) == p);
  }
}

TEST_CASE("rounding is monotone") {
  std::mt19937 g(31);
  for (int i = 0; i < 50000; ++i) {
    float x = rand_float(g, -30, 30);
    float y = rand_float(g, -30, 30);
    if (x > y) std::swap(x, y);
    CHECK(bf16_to_float(round_bf16(x)) <= bf16_to_float(round_bf16(y)));
  }
}

TEST_CASE("truncation drops the low half") {
  CHECK(truncate_bf16(1.00390625f) == 0x3F80);
  CHECK(truncate_bf16(1.9999f) == 0x3FFF);
  CHECK(truncate_bf16(-1.0f) == 0xBF80);
}

TEST_CASE("bf16 kernel fixed points") {
  CHECK(int_mul_bf16(round_bf16(1.5f), round_bf16(1.5f)) == round_bf16(2.0f));
  CHECK(bf16_to_float(int_mul_bf16(round_bf16(-4.0f), round_bf16(3.0f))) == -12.0f);
  CHECK(int_mul_bf16(0x0000, round_bf16(7.0f)) == 0x0000);
  CHECK(a_mult_bf16(0x3F80, 0x3F80) == 0x3F87);  // 1*1 picks up the 7/128 gamma step
  CHECK(e_div_bf16(round_bf16(3.0f), round_bf16(2.0f)) == round_bf16(1.5f));
  CHECK_THROWS_AS(e_div_bf16(round_bf16(1.0f), 0x0000), std::domain_error);
  CHECK_THROWS_AS(int_mul_bf16(0x7F80, round_bf16(1.0f)), std::domain_error);
  // saturation keeps the XOR sign
  CHECK(int_mul_bf16(0xFF7F, 0x7F7F) == (kSignMask16 | kMaxFinite16));
}

TEST_CASE("bf16 division inverts bf16 multiplication in the log domain") {
  std::mt19937 g(32);
  for (int i = 0; i < 20000; ++i) {
    uint16_t a = round_bf16(rand_float(g, -15, 15));
    uint16_t b = round_bf16(rand_float(g, -15, 15));
    CHECK(e_div_bf16(int_mul_bf16(a, b), b) == a);
  }
}

TEST_CASE("gamma-corrected bf16 multiply shifts the log domain by 7 steps") {
  std::mt19937 g(33);
  for (int i = 0; i < 20000; ++i) {
    uint16_t a = round_bf16(rand_float(g, -15, 15, false));
    uint16_t b = round_bf16(rand_float(g, -15, 15, false));
    int am = int_mul_bf16(a, b) & ~kSignMask16;
    int gm = a_mult_bf16(a, b) & ~kSignMask16;
    CHECK(gm - am == 7);
  }
}

TEST_CASE("bf16 multiplication agrees bit for bit with the widened float32 kernel") {
  // Exhaustive over every mantissa pair at a handful of shared exponents.
  for (int e : {-2, 0, 5}) {
    uint16_t base = static_cast<uint16_t>((e + 127) << kMantBits16);
    for (uint16_t ma = 0; ma <= kMantMask16; ++ma) {
      for (uint16_t mb = 0; mb <= kMantMask16; ++mb) {
        uint16_t a = static_cast<uint16_t>(base | ma);
        uint16_t b = static_cast<uint16_t>(base | mb);
        float wide = int_mul(bf16_to_float(a), bf16_to_float(b));
        REQUIRE(bits_of(bf16_to_float(int_mul_bf16(a, b))) == bits_of(wide));
      }
    }
  }
}

TEST_CASE("float32 accumulation avoids the bf16 small-increment stall") {
  // Adding 0.001 a thousand times: pure bf16 accumulation stalls once the
  // running sum's spacing exceeds the increment; accumulating in float32 and
  // rounding once at the end stays near the true total.
  float inc = bf16_to_float(round_bf16(0.001f));
  float bf_sum = 0.0f;
  float f32_sum = 0.0f;
  for (int i = 0; i < 1000; ++i) {
    bf_sum = snap_bf16(bf_sum + inc);
    f32_sum += inc;
  }
  CHECK(bf_sum < 0.52f);
  CHECK(std::fabs(bf16_to_float(round_bf16(f32_sum)) - 1.0f) < 0.01f);
}
