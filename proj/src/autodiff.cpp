#include "addint/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "addint/bfloat16.hpp"
#include "addint/kernels.hpp"

namespace addint {

const char* mul_mode_name(MulMode m) {
  switch (m) {
    case MulMode::Standard: return "Standard";
    case MulMode::ExactOp: return "ExactOp";
    case MulMode::ApproxOp: return "ApproxOp";
  }
  return "?";
}

MulMode mul_mode_from_name(const std::string& s) {
  if (s == "Standard" || s == "standard") return MulMode::Standard;
  if (s == "ExactOp" || s == "exact") return MulMode::ExactOp;
  if (s == "ApproxOp" || s == "approx") return MulMode::ApproxOp;
  throw std::invalid_argument("unknown MulMode: " + s);
}

namespace {

constexpr float kLog2EF = 1.44269504088896340736f;  // log2(e)
constexpr float kLn2F = 0.69314718055994530942f;    // ln 2
constexpr int64_t kZeroQ = int64_t{-1} << 40;
constexpr int64_t kFloorMask = ~int64_t{kMantMask32};

// Per-format constants for the integer kernel paths. bf16 values are kept
// widened; their magnitudes are multiples of 2^16 with the same bias and
// min-normal as fp32, so only rounding, saturation and the gamma step differ.
struct Fmt {
  bool bf16;
  uint32_t max_mag;
  int64_t gamma;     // gamma_fixed aligned to the 32-bit log domain
  float gamma_val;   // the same correction as a float value
};

Fmt fmt_of(MulFormat f) {
  if (f == MulFormat::BF16)
    return {true, 0x7F7F0000u, kGammaFixed16 << 16,
            static_cast<float>(std::ldexp(static_cast<double>(kGammaFixed16), -kMantBits16))};
  return {false, kMaxFinite32, kGammaFixed32, kGammaF};
}

inline float prep(float x, const Fmt& f) { return f.bf16 ? snap_bf16(x) : x; }

// ---- scalar forward kernels (raw, saturating; tensors own the checks) ----

inline float mul_sc(float a, float b, MulMode m, const Fmt& f) {
  if (m == MulMode::Standard) {
    if (!f.bf16) return a * b;
    return snap_bf16(snap_bf16(a) * snap_bf16(b));
  }
  float x = prep(a, f);
  float y = prep(b, f);
  return float_of(detail::mul_bits(bits_of(x), bits_of(y),
                                   m == MulMode::ApproxOp ? f.gamma : 0, f.max_mag));
}

inline float div_sc(float a, float b, MulMode m, const Fmt& f) {
  if (m == MulMode::Standard) {
    if (!f.bf16) return a / b;
    return snap_bf16(snap_bf16(a) / snap_bf16(b));
  }
  float x = prep(a, f);
  float y = prep(b, f);
  return float_of(detail::div_bits(bits_of(x), bits_of(y),
                                   m == MulMode::ApproxOp ? -f.gamma : 0, f.max_mag));
}

// e(x) in the format's fixed-point resolution, round-to-nearest-even.
inline float exp2_fmt(float x, const Fmt& f) {
  if (std::isnan(x)) return float_of(f.max_mag);
  float c = std::clamp(x, -300.0f, 300.0f);
  int frac = f.bf16 ? kMantBits16 : kMantBits32;
  int64_t q = std::llrint(std::ldexp(static_cast<double>(c), frac));
  return detail::from_q(q << (kMantBits32 - frac), f.max_mag);
}

// l(|x|) as a float value; operand already snapped for bf16.
inline float log2_fmt(float x) {
  return std::ldexp(static_cast<float>(detail::to_q(x)), -kMantBits32);
}

// Slope factors in the aligned domain (exact powers of two in both formats).
inline float eprime_fmt(float x, const Fmt& f) {
  if (std::isnan(x)) return float_of(f.max_mag);
  double k = std::floor(static_cast<double>(std::clamp(x, -300.0f, 300.0f)));
  return detail::from_q(static_cast<int64_t>(k) << kMantBits32, f.max_mag);
}

inline float lprime_fmt(float x) {
  uint32_t eb = magnitude_bits(x) >> kMantBits32;
  if (eb >= 254u) return 0.0f;
  return float_of((254u - eb) << kMantBits32);
}

// ---- scalar backward kernels ----

struct Pair {
  float a;
  float b;
};

inline int64_t self_mag(float x) {
  int64_t m = magnitude_bits(x);
  return m < int64_t{kMinNormal32} ? int64_t{kBias32} : m;
}

inline int64_t co_mag(float x) {
  int64_t m = magnitude_bits(x);
  return m < int64_t{kMinNormal32} ? kZeroQ : m - int64_t{kBias32};
}

inline int64_t up_mag(float x) {
  int64_t m = magnitude_bits(x);
  return m < int64_t{kMinNormal32} ? kZeroQ : m;
}

inline Pair d_mul_sc(float a, float b, float up, MulMode m, const Fmt& f) {
  if (m == MulMode::Standard) {
    if (!f.bf16) return {up * b, up * a};
    float u = snap_bf16(up), x = snap_bf16(a), y = snap_bf16(b);
    return {snap_bf16(u * y), snap_bf16(u * x)};
  }
  float x = prep(a, f), y = prep(b, f), u = prep(up, f);
  uint32_t us = sign_bit(u);
  if (m == MulMode::ExactOp) {
    int64_t uq = up_mag(u);
    return {float_of(detail::d_e_mult_mag(uq, self_mag(x), co_mag(y), f.max_mag) | (us ^ sign_bit(y))),
            float_of(detail::d_e_mult_mag(uq, self_mag(y), co_mag(x), f.max_mag) | (us ^ sign_bit(x)))};
  }
  // ApproxOp: gradient of a multiply is again an approximate multiply of the
  // co-operand and the upstream; the saved self-operand is never read.
  return {float_of(detail::mul_bits(bits_of(y), bits_of(u), f.gamma, f.max_mag)),
          float_of(detail::mul_bits(bits_of(x), bits_of(u), f.gamma, f.max_mag))};
}

inline Pair d_div_sc(float a, float b, float up, MulMode m, const Fmt& f) {
  if (m == MulMode::Standard) {
    if (!f.bf16) return {up / b, -up * a / (b * b)};
    float u = snap_bf16(up), x = snap_bf16(a), y = snap_bf16(b);
    return {snap_bf16(u / y), snap_bf16(-u * x / (y * y))};
  }
  float x = prep(a, f), y = prep(b, f), u = prep(up, f);
  uint32_t us = sign_bit(u);
  if (m == MulMode::ExactOp) {
    // f = e(l(x)-l(y)): df/dx = e'(s) l'(|x|), df/dy = -e'(s) l'(|y|).
    // At x pseudo-zero the forward is identically zero in y, so df/dy = 0,
    // while df/dx takes the right-limit slope (x remapped to mantissa 1.0).
    int64_t uq = up_mag(u);
    bool xz = is_pseudo_zero(x);
    int64_t xm = self_mag(x);
    int64_t ym = self_mag(y);
    int64_t s = xm - ym + int64_t{kBias32};
    auto mag = [&](int64_t own) {
      int64_t q = uq + (s & kFloorMask) - (own & kFloorMask);
      if (q < int64_t{kMinNormal32}) return 0u;
      if (q > int64_t{f.max_mag}) return f.max_mag;
      return static_cast<uint32_t>(q);
    };
    return {float_of(mag(xm) | (us ^ sign_bit(y))),
            xz ? 0.0f : float_of(mag(ym) | (us ^ sign_bit(x) ^ kSignMask32))};
  }
  // ApproxOp: true quotient rule realized with a-ops.
  float gx = float_of(detail::div_bits(bits_of(u), bits_of(y), -f.gamma, f.max_mag));
  float num = float_of(detail::mul_bits(bits_of(u), bits_of(x), f.gamma, f.max_mag));
  float den = float_of(detail::mul_bits(bits_of(y), bits_of(y), f.gamma, f.max_mag));
  float gy = float_of(detail::div_bits(bits_of(num), bits_of(den), -f.gamma, f.max_mag) ^ kSignMask32);
  return {gx, gy};
}

// Natural exp/log through the base-2 kernels; the log2(e) / ln 2 scaling
// multiplies run under the op's mode.

struct Exp1 {
  float out;
  float t;  // scaled argument fed to the pseudo-exponential
};

inline Exp1 exp_fwd_sc(float x, MulMode m, const Fmt& f) {
  if (m == MulMode::Standard) {
    if (!f.bf16) return {std::exp(x), 0.0f};
    return {snap_bf16(std::exp(snap_bf16(x))), 0.0f};
  }
  float c = prep(kLog2EF, f);
  float xx = prep(x, f);
  if (m == MulMode::ExactOp) {
    float t = float_of(detail::mul_bits(bits_of(xx), bits_of(c), 0, f.max_mag));
    return {exp2_fmt(t, f), t};
  }
  float t = float_of(detail::mul_bits(bits_of(xx), bits_of(c), f.gamma, f.max_mag));
  return {exp2_fmt(t + f.gamma_val, f), t};
}

inline float d_exp_sc(float x, float out, float t, float up, MulMode m, const Fmt& f) {
  if (m == MulMode::Standard) {
    if (!f.bf16) return up * out;
    return snap_bf16(snap_bf16(up) * out);
  }
  float u = prep(up, f);
  if (m == MulMode::ExactOp) {
    float c = prep(kLog2EF, f);
    float xx = prep(x, f);
    uint32_t g1 = detail::d_e_mult_mag(up_mag(u), self_mag(xx), co_mag(c), f.max_mag) |
                  (sign_bit(u) ^ sign_bit(c));
    return float_of(detail::mul_bits(g1, bits_of(eprime_fmt(t, f)), 0, f.max_mag));
  }
  return float_of(detail::mul_bits(bits_of(out), bits_of(u), f.gamma, f.max_mag));
}

inline float log_fwd_sc(float x, MulMode m, const Fmt& f) {
  if (m == MulMode::Standard) {
    if (!f.bf16) return std::log(x);
    return snap_bf16(std::log(snap_bf16(x)));
  }
  float c = prep(kLn2F, f);
  float xx = prep(x, f);
  if (is_pseudo_zero(xx)) xx = float_of(kMinNormal32 | sign_bit(xx));
  float l2 = prep(log2_fmt(xx), f);
  if (m == MulMode::ExactOp)
    return float_of(detail::mul_bits(bits_of(l2), bits_of(c), 0, f.max_mag));
  float l2a = prep(l2 + f.gamma_val, f);
  return float_of(detail::mul_bits(bits_of(l2a), bits_of(c), f.gamma, f.max_mag));
}

inline float d_log_sc(float x, float up, MulMode m, const Fmt& f) {
  if (m == MulMode::Standard) {
    if (!f.bf16) return up / x;
    return snap_bf16(snap_bf16(up) / snap_bf16(x));
  }
  float u = prep(up, f);
  float xx = prep(x, f);
  if (is_pseudo_zero(xx)) return 0.0f;
  if (m == MulMode::ExactOp) {
    float c = prep(kLn2F, f);
    float l2 = prep(log2_fmt(xx), f);
    uint32_t g1 = detail::d_e_mult_mag(up_mag(u), self_mag(l2), co_mag(c), f.max_mag) |
                  (sign_bit(u) ^ sign_bit(c));
    return float_of(detail::mul_bits(g1, bits_of(lprime_fmt(xx)), 0, f.max_mag));
  }
  return float_of(detail::div_bits(bits_of(u), bits_of(xx), -f.gamma, f.max_mag));
}

inline float sqrt_fwd_sc(float x, MulMode m, const Fmt& f) {
  if (m == MulMode::Standard) {
    if (!f.bf16) return std::sqrt(x);
    return snap_bf16(std::sqrt(snap_bf16(x)));
  }
  float xx = prep(x, f);
  if (is_pseudo_zero(xx)) return 0.0f;
  int64_t q = detail::to_q(xx);
  // Halve in the format's own fixed point, rounding toward -inf.
  if (f.bf16) return detail::from_q(((q >> 16) >> 1) << 16, f.max_mag);
  return detail::from_q(q >> 1, f.max_mag);
}

inline float d_sqrt_sc(float x, float out, float up, MulMode m, const Fmt& f) {
  if (m == MulMode::Standard) {
    if (out <= 0.0f) return 0.0f;
    if (!f.bf16) return up / (2.0f * out);
    return snap_bf16(snap_bf16(up) / (2.0f * out));
  }
  float xx = prep(x, f);
  float u = prep(up, f);
  if (is_pseudo_zero(xx) || is_pseudo_zero(out)) return 0.0f;
  if (m == MulMode::ExactOp) {
    // slope of e(l(x)/2): 2^(floor(l/2) - floor(log2 x) - 1)
    int64_t q = detail::to_q(xx);
    int64_t qh = f.bf16 ? (((q >> 16) >> 1) << 16) : (q >> 1);
    int64_t g = up_mag(u) + (qh & kFloorMask) - ((int64_t{magnitude_bits(xx)}) & kFloorMask) -
                (int64_t{1} << kMantBits32) + int64_t{kBias32};
    uint32_t mag;
    if (g < int64_t{kMinNormal32}) mag = 0u;
    else if (g > int64_t{f.max_mag}) mag = f.max_mag;
    else mag = static_cast<uint32_t>(g);
    return float_of(mag | sign_bit(u));
  }
  float den = out + out;
  return float_of(detail::div_bits(bits_of(u), bits_of(den), -f.gamma, f.max_mag));
}

}  // namespace

// ---- node record ----

enum class Op {
  Leaf, Add, Sub, Mul, Div, Matmul, Relu, Exp, Log, Sqrt, Scale, AddConst,
  SumAll, MeanAll, SumAxis0, GatherCols, Reshape, Transpose2d, BhwcToBchw,
  BchwToBhwc, Im2col
};

struct Node {
  Op op = Op::Leaf;
  MulMode mode = MulMode::Standard;
  int32_t a = -1;
  int32_t b = -1;
  Tensor val;
  Tensor saved;  // op-specific forward by-product (scaled exp arguments)
  Tensor grad;
  bool requires_grad = false;
  bool touched = false;
  double c = 0.0;
  std::vector<int64_t> aux;
};

namespace {

// ---- broadcasting ----

struct BcPlan {
  std::vector<int64_t> shape;
  std::vector<int64_t> sa;  // strides into a per output dim (0 where broadcast)
  std::vector<int64_t> sb;
  int64_t n = 1;
  bool same = false;  // identical shapes, identity index map
};

BcPlan bc_plan(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
  BcPlan p;
  if (a == b) {
    p.shape = a;
    p.n = Tensor::checked_numel(a);
    p.same = true;
    return p;
  }
  size_t rank = std::max(a.size(), b.size());
  p.shape.resize(rank);
  std::vector<int64_t> ea(rank, 1), eb(rank, 1);
  for (size_t i = 0; i < a.size(); ++i) ea[rank - a.size() + i] = a[i];
  for (size_t i = 0; i < b.size(); ++i) eb[rank - b.size() + i] = b[i];
  for (size_t i = 0; i < rank; ++i) {
    if (ea[i] != eb[i] && ea[i] != 1 && eb[i] != 1)
      throw std::invalid_argument("broadcast: incompatible shapes " + shape_str(a) + " vs " +
                                  shape_str(b));
    p.shape[i] = std::max(ea[i], eb[i]);
    p.n *= p.shape[i];
  }
  p.sa.assign(rank, 0);
  p.sb.assign(rank, 0);
  int64_t sta = 1;
  for (size_t i = rank; i-- > 0;) {
    if (ea[i] != 1) p.sa[i] = sta;
    sta *= ea[i];
  }
  int64_t stb = 1;
  for (size_t i = rank; i-- > 0;) {
    if (eb[i] != 1) p.sb[i] = stb;
    stb *= eb[i];
  }
  return p;
}

// Calls fn(out_index, a_index, b_index) over the full broadcast output.
template <class F>
void bc_walk(const BcPlan& p, F&& fn) {
  if (p.same) {
    for (int64_t i = 0; i < p.n; ++i) fn(i, i, i);
    return;
  }
  size_t rank = p.shape.size();
  std::vector<int64_t> coord(rank, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t o = 0; o < p.n; ++o) {
    fn(o, ia, ib);
    for (size_t d = rank; d-- > 0;) {
      coord[d]++;
      ia += p.sa[d];
      ib += p.sb[d];
      if (coord[d] < p.shape[d]) break;
      ia -= p.sa[d] * p.shape[d];
      ib -= p.sb[d] * p.shape[d];
      coord[d] = 0;
    }
  }
}

// ---- matmul kernels ----

// Precomputed log-domain operand views. kind selects the transform:
// 0: magnitude (pseudo-zero -> sentinel)           forward / upstream / co-reader
// 1: magnitude - bias + off (pseudo-zero -> sentinel)  co-operand side
// 2: magnitude (pseudo-zero -> bias)                self side of d_e_mult
struct LogView {
  std::vector<int64_t> q;
  std::vector<uint32_t> s;
};

LogView log_view(const float* p, int64_t n, int kind, int64_t off, bool bf16) {
  LogView v;
  v.q.resize(n);
  v.s.resize(n);
  for (int64_t i = 0; i < n; ++i) {
    float x = bf16 ? snap_bf16(p[i]) : p[i];
    uint32_t b = bits_of(x);
    int64_t mag = b & ~kSignMask32;
    v.s[i] = b & kSignMask32;
    bool z = mag < int64_t{kMinNormal32};
    switch (kind) {
      case 0: v.q[i] = z ? kZeroQ : mag; break;
      case 1: v.q[i] = z ? kZeroQ : mag - int64_t{kBias32} + off; break;
      default: v.q[i] = z ? int64_t{kBias32} : mag; break;
    }
  }
  return v;
}

inline uint32_t clamp_mag(int64_t q, uint32_t max_mag) {
  if (q < int64_t{kMinNormal32}) return 0u;
  if (q > int64_t{max_mag}) return max_mag;
  return static_cast<uint32_t>(q);
}

void matmul_fwd(const float* X, const float* W, float* Y, int64_t M, int64_t K, int64_t N,
                MulMode mode, const Fmt& f) {
  if (mode == MulMode::Standard && !f.bf16) {
    for (int64_t i = 0; i < M; ++i) {
      float* yr = Y + i * N;
      std::fill(yr, yr + N, 0.0f);
      for (int64_t k = 0; k < K; ++k) {
        float xv = X[i * K + k];
        const float* wr = W + k * N;
        for (int64_t j = 0; j < N; ++j) yr[j] += xv * wr[j];
      }
    }
    return;
  }
  if (mode == MulMode::Standard) {  // bf16: round every product
    std::vector<float> ws(K * N);
    for (int64_t i = 0; i < K * N; ++i) ws[i] = snap_bf16(W[i]);
    for (int64_t i = 0; i < M; ++i) {
      float* yr = Y + i * N;
      std::fill(yr, yr + N, 0.0f);
      for (int64_t k = 0; k < K; ++k) {
        float xv = snap_bf16(X[i * K + k]);
        const float* wr = ws.data() + k * N;
        for (int64_t j = 0; j < N; ++j) yr[j] += snap_bf16(xv * wr[j]);
      }
    }
    return;
  }
  int64_t off = mode == MulMode::ApproxOp ? f.gamma : 0;
  LogView xv = log_view(X, M * K, 0, 0, f.bf16);
  LogView wv = log_view(W, K * N, 1, off, f.bf16);
  uint32_t mm = f.max_mag;
  for (int64_t i = 0; i < M; ++i) {
    float* yr = Y + i * N;
    std::fill(yr, yr + N, 0.0f);
    for (int64_t k = 0; k < K; ++k) {
      int64_t xq = xv.q[i * K + k];
      uint32_t xs = xv.s[i * K + k];
      const int64_t* wq = wv.q.data() + k * N;
      const uint32_t* ws = wv.s.data() + k * N;
      for (int64_t j = 0; j < N; ++j)
        yr[j] += float_of(clamp_mag(xq + wq[j], mm) | (xs ^ ws[j]));
    }
  }
}

void matmul_bwd(const float* X, const float* W, const float* UP, float* GX, float* GW,
                int64_t M, int64_t K, int64_t N, MulMode mode, const Fmt& f) {
  if (mode == MulMode::Standard && !f.bf16) {
    if (GX) {
      for (int64_t i = 0; i < M; ++i)
        for (int64_t k = 0; k < K; ++k) {
          const float* ur = UP + i * N;
          const float* wr = W + k * N;
          float acc = 0.0f;
          for (int64_t j = 0; j < N; ++j) acc += ur[j] * wr[j];
          GX[i * K + k] += acc;
        }
    }
    if (GW) {
      for (int64_t k = 0; k < K; ++k) {
        float* gr = GW + k * N;
        for (int64_t i = 0; i < M; ++i) {
          float xv = X[i * K + k];
          const float* ur = UP + i * N;
          for (int64_t j = 0; j < N; ++j) gr[j] += xv * ur[j];
        }
      }
    }
    return;
  }
  if (mode == MulMode::Standard) {  // bf16
    std::vector<float> xs(M * K), ws(K * N), us(M * N);
    for (int64_t i = 0; i < M * K; ++i) xs[i] = snap_bf16(X[i]);
    for (int64_t i = 0; i < K * N; ++i) ws[i] = snap_bf16(W[i]);
    for (int64_t i = 0; i < M * N; ++i) us[i] = snap_bf16(UP[i]);
    if (GX) {
      for (int64_t i = 0; i < M; ++i)
        for (int64_t k = 0; k < K; ++k) {
          float acc = 0.0f;
          for (int64_t j = 0; j < N; ++j) acc += snap_bf16(us[i * N + j] * ws[k * N + j]);
          GX[i * K + k] += acc;
        }
    }
    if (GW) {
      for (int64_t k = 0; k < K; ++k)
        for (int64_t j = 0; j < N; ++j) {
          float acc = 0.0f;
          for (int64_t i = 0; i < M; ++i) acc += snap_bf16(xs[i * K + k] * us[i * N + j]);
          GW[k * N + j] += acc;
        }
    }
    return;
  }
  uint32_t mm = f.max_mag;
  if (mode == MulMode::ExactOp) {
    LogView ue = log_view(UP, M * N, 0, 0, f.bf16);
    if (GX) {
      LogView xa = log_view(X, M * K, 2, 0, f.bf16);
      LogView wc = log_view(W, K * N, 1, 0, f.bf16);
      for (int64_t i = 0; i < M; ++i) {
        const int64_t* uq = ue.q.data() + i * N;
        const uint32_t* us = ue.s.data() + i * N;
        for (int64_t k = 0; k < K; ++k) {
          int64_t qa = xa.q[i * K + k];
          int64_t fa = qa & kFloorMask;
          const int64_t* wq = wc.q.data() + k * N;
          const uint32_t* ws = wc.s.data() + k * N;
          float acc = 0.0f;
          for (int64_t j = 0; j < N; ++j)
            acc += float_of(clamp_mag(uq[j] + ((qa + wq[j]) & kFloorMask) - fa, mm) |
                            (us[j] ^ ws[j]));
          GX[i * K + k] += acc;
        }
      }
    }
    if (GW) {
      LogView wa = log_view(W, K * N, 2, 0, f.bf16);
      LogView xc = log_view(X, M * K, 1, 0, f.bf16);
      for (int64_t k = 0; k < K; ++k)
        for (int64_t j = 0; j < N; ++j) {
          int64_t qb = wa.q[k * N + j];
          int64_t fb = qb & kFloorMask;
          float acc = 0.0f;
          for (int64_t i = 0; i < M; ++i)
            acc += float_of(clamp_mag(ue.q[i * N + j] + ((qb + xc.q[i * K + k]) & kFloorMask) - fb,
                                      mm) |
                            (ue.s[i * N + j] ^ xc.s[i * K + k]));
          GW[k * N + j] += acc;
        }
    }
    return;
  }
  // ApproxOp: each gradient reads only the co-operand and the upstream.
  LogView up = log_view(UP, M * N, 1, f.gamma, f.bf16);
  if (GX) {
    LogView we = log_view(W, K * N, 0, 0, f.bf16);
    for (int64_t i = 0; i < M; ++i)
      for (int64_t k = 0; k < K; ++k) {
        const int64_t* wq = we.q.data() + k * N;
        const uint32_t* ws = we.s.data() + k * N;
        const int64_t* uq = up.q.data() + i * N;
        const uint32_t* us = up.s.data() + i * N;
        float acc = 0.0f;
        for (int64_t j = 0; j < N; ++j)
          acc += float_of(clamp_mag(wq[j] + uq[j], mm) | (ws[j] ^ us[j]));
        GX[i * K + k] += acc;
      }
  }
  if (GW) {
    LogView xe = log_view(X, M * K, 0, 0, f.bf16);
    for (int64_t k = 0; k < K; ++k)
      for (int64_t j = 0; j < N; ++j) {
        float acc = 0.0f;
        for (int64_t i = 0; i < M; ++i)
          acc += float_of(clamp_mag(xe.q[i * K + k] + up.q[i * N + j], mm) |
                          (xe.s[i * K + k] ^ up.s[i * N + j]));
        GW[k * N + j] += acc;
      }
  }
}

}  // namespace

// ---- Tape ----

Tape::Tape(MulFormat fmt) : fmt_(fmt) {}
Tape::~Tape() = default;

size_t Tape::size() const { return nodes_.size(); }

Node& Tape::at(Var v) {
  if (v.id < 0 || v.id >= static_cast<int32_t>(nodes_.size()))
    throw std::out_of_range("Tape: bad Var");
  return nodes_[v.id];
}

const Node& Tape::at(Var v) const { return const_cast<Tape*>(this)->at(v); }

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = Op::Leaf;
  n.val = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

const Tensor& Tape::value(Var v) const { return at(v).val; }

const Tensor& Tape::grad(Var v) const {
  const Node& n = at(v);
  if (n.grad.data.empty()) throw std::logic_error("Tape::grad: node has no gradient");
  return n.grad;
}

bool Tape::requires_grad(Var v) const { return at(v).requires_grad; }

namespace {

Node binary_node(Op op, MulMode m, Var a, Var b, const Node& na, const Node& nb) {
  Node n;
  n.op = op;
  n.mode = m;
  n.a = a.id;
  n.b = b.id;
  n.requires_grad = na.requires_grad || nb.requires_grad;
  return n;
}

Node unary_node(Op op, MulMode m, Var a, const Node& na) {
  Node n;
  n.op = op;
  n.mode = m;
  n.a = a.id;
  n.requires_grad = na.requires_grad;
  return n;
}

}  // namespace

Var Tape::add(Var a, Var b) {
  Node n = binary_node(Op::Add, MulMode::Standard, a, b, at(a), at(b));
  BcPlan p = bc_plan(at(a).val.shape, at(b).val.shape);
  n.val = Tensor(p.shape);
  const float* pa = at(a).val.data.data();
  const float* pb = at(b).val.data.data();
  float* po = n.val.data.data();
  bc_walk(p, [&](int64_t o, int64_t ia, int64_t ib) { po[o] = pa[ia] + pb[ib]; });
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  Node n = binary_node(Op::Sub, MulMode::Standard, a, b, at(a), at(b));
  BcPlan p = bc_plan(at(a).val.shape, at(b).val.shape);
  n.val = Tensor(p.shape);
  const float* pa = at(a).val.data.data();
  const float* pb = at(b).val.data.data();
  float* po = n.val.data.data();
  bc_walk(p, [&](int64_t o, int64_t ia, int64_t ib) { po[o] = pa[ia] - pb[ib]; });
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b, MulMode m) {
  Node n = binary_node(Op::Mul, m, a, b, at(a), at(b));
  BcPlan p = bc_plan(at(a).val.shape, at(b).val.shape);
  n.val = Tensor(p.shape);
  Fmt f = fmt_of(fmt_);
  const float* pa = at(a).val.data.data();
  const float* pb = at(b).val.data.data();
  float* po = n.val.data.data();
  bc_walk(p, [&](int64_t o, int64_t ia, int64_t ib) { po[o] = mul_sc(pa[ia], pb[ib], m, f); });
  return push(std::move(n));
}

Var Tape::div(Var a, Var b, MulMode m) {
  Node n = binary_node(Op::Div, m, a, b, at(a), at(b));
  BcPlan p = bc_plan(at(a).val.shape, at(b).val.shape);
  n.val = Tensor(p.shape);
  Fmt f = fmt_of(fmt_);
  const float* pa = at(a).val.data.data();
  const float* pb = at(b).val.data.data();
  float* po = n.val.data.data();
  bc_walk(p, [&](int64_t o, int64_t ia, int64_t ib) { po[o] = div_sc(pa[ia], pb[ib], m, f); });
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b, MulMode m) {
  const Tensor& x = at(a).val;
  const Tensor& w = at(b).val;
  if (x.rank() != 2 || w.rank() != 2 || x.shape[1] != w.shape[0])
    throw std::invalid_argument("matmul: shapes " + shape_str(x.shape) + " x " +
                                shape_str(w.shape));
  Node n = binary_node(Op::Matmul, m, a, b, at(a), at(b));
  n.val = Tensor({x.shape[0], w.shape[1]});
  matmul_fwd(x.data.data(), w.data.data(), n.val.data.data(), x.shape[0], x.shape[1], w.shape[1],
             m, fmt_of(fmt_));
  return push(std::move(n));
}

Var Tape::relu(Var a) {
  Node n = unary_node(Op::Relu, MulMode::Standard, a, at(a));
  n.val = Tensor(at(a).val.shape);
  const float* pa = at(a).val.data.data();
  for (int64_t i = 0; i < n.val.numel(); ++i) n.val.data[i] = pa[i] > 0.0f ? pa[i] : 0.0f;
  return push(std::move(n));
}

Var Tape::exp_op(Var a, MulMode m) {
  Node n = unary_node(Op::Exp, m, a, at(a));
  n.val = Tensor(at(a).val.shape);
  n.saved = Tensor(at(a).val.shape);
  Fmt f = fmt_of(fmt_);
  const float* pa = at(a).val.data.data();
  for (int64_t i = 0; i < n.val.numel(); ++i) {
    Exp1 e = exp_fwd_sc(pa[i], m, f);
    n.val.data[i] = e.out;
    n.saved.data[i] = e.t;
  }
  return push(std::move(n));
}

Var Tape::log_op(Var a, MulMode m) {
  Node n = unary_node(Op::Log, m, a, at(a));
  n.val = Tensor(at(a).val.shape);
  Fmt f = fmt_of(fmt_);
  const float* pa = at(a).val.data.data();
  for (int64_t i = 0; i < n.val.numel(); ++i) n.val.data[i] = log_fwd_sc(pa[i], m, f);
  return push(std::move(n));
}

Var Tape::sqrt_op(Var a, MulMode m) {
  Node n = unary_node(Op::Sqrt, m, a, at(a));
  n.val = Tensor(at(a).val.shape);
  Fmt f = fmt_of(fmt_);
  const float* pa = at(a).val.data.data();
  for (int64_t i = 0; i < n.val.numel(); ++i) n.val.data[i] = sqrt_fwd_sc(pa[i], m, f);
  return push(std::move(n));
}

Var Tape::scale(Var a, double c) {
  Node n = unary_node(Op::Scale, MulMode::Standard, a, at(a));
  n.c = c;
  n.val = Tensor(at(a).val.shape);
  float cf = static_cast<float>(c);
  const float* pa = at(a).val.data.data();
  for (int64_t i = 0; i < n.val.numel(); ++i) n.val.data[i] = pa[i] * cf;
  return push(std::move(n));
}

Var Tape::add_const(Var a, double c) {
  Node n = unary_node(Op::AddConst, MulMode::Standard, a, at(a));
  n.c = c;
  n.val = Tensor(at(a).val.shape);
  float cf = static_cast<float>(c);
  const float* pa = at(a).val.data.data();
  for (int64_t i = 0; i < n.val.numel(); ++i) n.val.data[i] = pa[i] + cf;
  return push(std::move(n));
}

Var Tape::sum_all(Var a) {
  Node n = unary_node(Op::SumAll, MulMode::Standard, a, at(a));
  float acc = 0.0f;
  for (float v : at(a).val.data) acc += v;
  n.val = scalar_tensor(acc);
  return push(std::move(n));
}

Var Tape::mean_all(Var a) {
  Node n = unary_node(Op::MeanAll, MulMode::Standard, a, at(a));
  int64_t m = at(a).val.numel();
  if (m == 0) throw std::invalid_argument("mean_all: empty tensor");
  float acc = 0.0f;
  for (float v : at(a).val.data) acc += v;
  n.val = scalar_tensor(acc / static_cast<float>(m));
  return push(std::move(n));
}

Var Tape::sum_axis0(Var a) {
  const Tensor& x = at(a).val;
  if (x.rank() != 2) throw std::invalid_argument("sum_axis0: rank-2 input required");
  Node n = unary_node(Op::SumAxis0, MulMode::Standard, a, at(a));
  int64_t r = x.shape[0], c = x.shape[1];
  n.val = Tensor({c});
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) n.val.data[j] += x.data[i * c + j];
  return push(std::move(n));
}

Var Tape::gather_cols(Var a, std::vector<int64_t> cols) {
  const Tensor& x = at(a).val;
  if (x.rank() != 2 || static_cast<int64_t>(cols.size()) != x.shape[0])
    throw std::invalid_argument("gather_cols: need one column index per row");
  Node n = unary_node(Op::GatherCols, MulMode::Standard, a, at(a));
  int64_t k = x.shape[1];
  n.val = Tensor({x.shape[0]});
  for (int64_t i = 0; i < x.shape[0]; ++i) {
    if (cols[i] < 0 || cols[i] >= k) throw std::out_of_range("gather_cols: index out of range");
    n.val.data[i] = x.data[i * k + cols[i]];
  }
  n.aux = std::move(cols);
  return push(std::move(n));
}

Var Tape::reshape(Var a, std::vector<int64_t> shape) {
  const Tensor& x = at(a).val;
  if (Tensor::checked_numel(shape) != x.numel())
    throw std::invalid_argument("reshape: element count mismatch");
  Node n = unary_node(Op::Reshape, MulMode::Standard, a, at(a));
  n.val = Tensor(std::move(shape), x.data);
  return push(std::move(n));
}

Var Tape::transpose2d(Var a) {
  const Tensor& x = at(a).val;
  if (x.rank() != 2) throw std::invalid_argument("transpose2d: rank-2 input required");
  Node n = unary_node(Op::Transpose2d, MulMode::Standard, a, at(a));
  int64_t r = x.shape[0], c = x.shape[1];
  n.val = Tensor({c, r});
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) n.val.data[j * r + i] = x.data[i * c + j];
  return push(std::move(n));
}

namespace {

void permute_bhwc(const Tensor& x, Tensor& out, bool to_bchw) {
  int64_t d0 = x.shape[0], d1 = x.shape[1], d2 = x.shape[2], d3 = x.shape[3];
  // to_bchw: x is [B,H,W,C] -> out [B,C,H,W]; else x is [B,C,H,W] -> out [B,H,W,C]
  if (to_bchw) {
    out = Tensor({d0, d3, d1, d2});
    for (int64_t b = 0; b < d0; ++b)
      for (int64_t h = 0; h < d1; ++h)
        for (int64_t w = 0; w < d2; ++w)
          for (int64_t c = 0; c < d3; ++c)
            out.data[((b * d3 + c) * d1 + h) * d2 + w] = x.data[((b * d1 + h) * d2 + w) * d3 + c];
  } else {
    out = Tensor({d0, d2, d3, d1});
    for (int64_t b = 0; b < d0; ++b)
      for (int64_t c = 0; c < d1; ++c)
        for (int64_t h = 0; h < d2; ++h)
          for (int64_t w = 0; w < d3; ++w)
            out.data[((b * d2 + h) * d3 + w) * d1 + c] = x.data[((b * d1 + c) * d2 + h) * d3 + w];
  }
}

}  // namespace

Var Tape::bhwc_to_bchw(Var a) {
  const Tensor& x = at(a).val;
  if (x.rank() != 4) throw std::invalid_argument("bhwc_to_bchw: rank-4 input required");
  Node n = unary_node(Op::BhwcToBchw, MulMode::Standard, a, at(a));
  permute_bhwc(x, n.val, true);
  return push(std::move(n));
}

Var Tape::bchw_to_bhwc(Var a) {
  const Tensor& x = at(a).val;
  if (x.rank() != 4) throw std::invalid_argument("bchw_to_bhwc: rank-4 input required");
  Node n = unary_node(Op::BchwToBhwc, MulMode::Standard, a, at(a));
  permute_bhwc(x, n.val, false);
  return push(std::move(n));
}

Var Tape::im2col(Var a, int kh, int kw, int stride, int pad) {
  const Tensor& x = at(a).val;
  if (x.rank() != 4) throw std::invalid_argument("im2col: rank-4 input required");
  if (kh < 1 || kw < 1 || stride < 1 || pad < 0)
    throw std::invalid_argument("im2col: bad geometry");
  int64_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  int64_t OH = (H + 2 * pad - kh) / stride + 1;
  int64_t OW = (W + 2 * pad - kw) / stride + 1;
  if (H + 2 * pad < kh || W + 2 * pad < kw)
    throw std::invalid_argument("im2col: kernel larger than padded input");
  Node n = unary_node(Op::Im2col, MulMode::Standard, a, at(a));
  n.aux = {kh, kw, stride, pad, B, C, H, W, OH, OW};
  n.val = Tensor({B * OH * OW, C * kh * kw});
  float* out = n.val.data.data();
  const float* in = x.data.data();
  int64_t row = 0;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t oh = 0; oh < OH; ++oh)
      for (int64_t ow = 0; ow < OW; ++ow, ++row) {
        float* r = out + row * (C * kh * kw);
        int64_t col = 0;
        for (int64_t c = 0; c < C; ++c)
          for (int64_t ky = 0; ky < kh; ++ky)
            for (int64_t kx = 0; kx < kw; ++kx, ++col) {
              int64_t ih = oh * stride - pad + ky;
              int64_t iw = ow * stride - pad + kx;
              r[col] = (ih >= 0 && ih < H && iw >= 0 && iw < W)
                           ? in[((b * C + c) * H + ih) * W + iw]
                           : 0.0f;
            }
      }
  return push(std::move(n));
}

namespace {

void ensure_grad(Node& n) {
  if (n.grad.data.empty()) n.grad = Tensor(n.val.shape);
}

}  // namespace

void Tape::backward(Var loss) {
  Node& top = at(loss);
  if (top.val.numel() != 1) throw std::invalid_argument("backward: loss must have one element");
  for (Node& n : nodes_) {
    n.touched = false;
    if (!n.grad.data.empty()) std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0f);
  }
  ensure_grad(top);
  top.grad.data[0] = 1.0f;
  top.touched = true;
  Fmt f = fmt_of(fmt_);

  auto reach = [&](int32_t id) -> float* {
    if (id < 0) return nullptr;
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    ensure_grad(n);
    n.touched = true;
    return n.grad.data.data();
  };

  for (int32_t i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.touched || n.op == Op::Leaf || !n.requires_grad) continue;
    const float* up = n.grad.data.data();
    Node* na = n.a >= 0 ? &nodes_[n.a] : nullptr;
    Node* nb = n.b >= 0 ? &nodes_[n.b] : nullptr;
    switch (n.op) {
      case Op::Add: {
        BcPlan p = bc_plan(na->val.shape, nb->val.shape);
        float* ga = reach(n.a);
        float* gb = reach(n.b);
        bc_walk(p, [&](int64_t o, int64_t ia, int64_t ib) {
          if (ga) ga[ia] += up[o];
          if (gb) gb[ib] += up[o];
        });
        break;
      }
      case Op::Sub: {
        BcPlan p = bc_plan(na->val.shape, nb->val.shape);
        float* ga = reach(n.a);
        float* gb = reach(n.b);
        bc_walk(p, [&](int64_t o, int64_t ia, int64_t ib) {
          if (ga) ga[ia] += up[o];
          if (gb) gb[ib] -= up[o];
        });
        break;
      }
      case Op::Mul: {
        BcPlan p = bc_plan(na->val.shape, nb->val.shape);
        float* ga = reach(n.a);
        float* gb = reach(n.b);
        const float* pa = na->val.data.data();
        const float* pb = nb->val.data.data();
        bc_walk(p, [&](int64_t o, int64_t ia, int64_t ib) {
          Pair g = d_mul_sc(pa[ia], pb[ib], up[o], n.mode, f);
          if (ga) ga[ia] += g.a;
          if (gb) gb[ib] += g.b;
        });
        break;
      }
      case Op::Div: {
        BcPlan p = bc_plan(na->val.shape, nb->val.shape);
        float* ga = reach(n.a);
        float* gb = reach(n.b);
        const float* pa = na->val.data.data();
        const float* pb = nb->val.data.data();
        bc_walk(p, [&](int64_t o, int64_t ia, int64_t ib) {
          Pair g = d_div_sc(pa[ia], pb[ib], up[o], n.mode, f);
          if (ga) ga[ia] += g.a;
          if (gb) gb[ib] += g.b;
        });
        break;
      }
      case Op::Matmul: {
        float* ga = reach(n.a);
        float* gb = reach(n.b);
        matmul_bwd(na->val.data.data(), nb->val.data.data(), up, ga, gb, na->val.shape[0],
                   na->val.shape[1], nb->val.shape[1], n.mode, f);
        break;
      }
      case Op::Relu: {
        float* ga = reach(n.a);
        if (!ga) break;
        const float* pa = na->val.data.data();
        for (int64_t o = 0; o < n.val.numel(); ++o)
          if (pa[o] > 0.0f) ga[o] += up[o];
        break;
      }
      case Op::Exp: {
        float* ga = reach(n.a);
        if (!ga) break;
        const float* pa = na->val.data.data();
        for (int64_t o = 0; o < n.val.numel(); ++o)
          ga[o] += d_exp_sc(pa[o], n.val.data[o], n.saved.data[o], up[o], n.mode, f);
        break;
      }
      case Op::Log: {
        float* ga = reach(n.a);
        if (!ga) break;
        const float* pa = na->val.data.data();
        for (int64_t o = 0; o < n.val.numel(); ++o)
          ga[o] += d_log_sc(pa[o], up[o], n.mode, f);
        break;
      }
      case Op::Sqrt: {
        float* ga = reach(n.a);
        if (!ga) break;
        const float* pa = na->val.data.data();
        for (int64_t o = 0; o < n.val.numel(); ++o)
          ga[o] += d_sqrt_sc(pa[o], n.val.data[o], up[o], n.mode, f);
        break;
      }
      case Op::Scale: {
        float* ga = reach(n.a);
        if (!ga) break;
        float cf = static_cast<float>(n.c);
        for (int64_t o = 0; o < n.val.numel(); ++o) ga[o] += up[o] * cf;
        break;
      }
      case Op::AddConst: {
        float* ga = reach(n.a);
        if (!ga) break;
        for (int64_t o = 0; o < n.val.numel(); ++o) ga[o] += up[o];
        break;
      }
      case Op::SumAll: {
        float* ga = reach(n.a);
        if (!ga) break;
        float g = up[0];
        for (int64_t o = 0; o < na->val.numel(); ++o) ga[o] += g;
        break;
      }
      case Op::MeanAll: {
        float* ga = reach(n.a);
        if (!ga) break;
        float g = up[0] / static_cast<float>(na->val.numel());
        for (int64_t o = 0; o < na->val.numel(); ++o) ga[o] += g;
        break;
      }
      case Op::SumAxis0: {
        float* ga = reach(n.a);
        if (!ga) break;
        int64_t r = na->val.shape[0], c = na->val.shape[1];
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < c; ++j) ga[i * c + j] += up[j];
        break;
      }
      case Op::GatherCols: {
        float* ga = reach(n.a);
        if (!ga) break;
        int64_t k = na->val.shape[1];
        for (int64_t i = 0; i < na->val.shape[0]; ++i) ga[i * k + n.aux[i]] += up[i];
        break;
      }
      case Op::Reshape: {
        float* ga = reach(n.a);
        if (!ga) break;
        for (int64_t o = 0; o < n.val.numel(); ++o) ga[o] += up[o];
        break;
      }
      case Op::Transpose2d: {
        float* ga = reach(n.a);
        if (!ga) break;
        int64_t r = na->val.shape[0], c = na->val.shape[1];
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < c; ++j) ga[i * c + j] += up[j * r + i];
        break;
      }
      case Op::BhwcToBchw: {
        float* ga = reach(n.a);
        if (!ga) break;
        // out [B,C,H,W] <- in [B,H,W,C]
        int64_t B = na->val.shape[0], H = na->val.shape[1], W = na->val.shape[2],
                C = na->val.shape[3];
        for (int64_t b = 0; b < B; ++b)
          for (int64_t h = 0; h < H; ++h)
            for (int64_t w = 0; w < W; ++w)
              for (int64_t c = 0; c < C; ++c)
                ga[((b * H + h) * W + w) * C + c] += up[((b * C + c) * H + h) * W + w];
        break;
      }
      case Op::BchwToBhwc: {
        float* ga = reach(n.a);
        if (!ga) break;
        int64_t B = na->val.shape[0], C = na->val.shape[1], H = na->val.shape[2],
                W = na->val.shape[3];
        for (int64_t b = 0; b < B; ++b)
          for (int64_t c = 0; c < C; ++c)
            for (int64_t h = 0; h < H; ++h)
              for (int64_t w = 0; w < W; ++w)
                ga[((b * C + c) * H + h) * W + w] += up[((b * H + h) * W + w) * C + c];
        break;
      }
      case Op::Im2col: {
        float* ga = reach(n.a);
        if (!ga) break;
        int64_t kh = n.aux[0], kw = n.aux[1], stride = n.aux[2], pad = n.aux[3], B = n.aux[4],
                C = n.aux[5], H = n.aux[6], W = n.aux[7], OH = n.aux[8], OW = n.aux[9];
        int64_t row = 0;
        for (int64_t b = 0; b < B; ++b)
          for (int64_t oh = 0; oh < OH; ++oh)
            for (int64_t ow = 0; ow < OW; ++ow, ++row) {
              const float* r = up + row * (C * kh * kw);
              int64_t col = 0;
              for (int64_t c = 0; c < C; ++c)
                for (int64_t ky = 0; ky < kh; ++ky)
                  for (int64_t kx = 0; kx < kw; ++kx, ++col) {
                    int64_t ih = oh * stride - pad + ky;
                    int64_t iw = ow * stride - pad + kx;
                    if (ih >= 0 && ih < H && iw >= 0 && iw < W)
                      ga[((b * C + c) * H + ih) * W + iw] += r[col];
                  }
            }
        break;
      }
      case Op::Leaf:
        break;
    }
  }
}

}  // namespace addint
