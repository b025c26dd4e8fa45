#pragma once

// Mixed-precision training policy. Multiplies may run on the bf16 grid, but
// accumulation and master weights always stay float32; the only other knob is
// whether weight gradients are rounded to bf16 after full accumulation.

#include "addint/autodiff.hpp"
#include "addint/bfloat16.hpp"
#include "addint/tensor.hpp"

namespace addint {

enum class GradRounding { None, Bf16AfterAccumulation };

struct MixedPrecisionPolicy {
  MulFormat multiply_format = MulFormat::FP32;
  GradRounding grad_rounding = GradRounding::None;
};

inline void round_tensor_bf16(Tensor& t) {
  for (float& v : t.data) v = snap_bf16(v);
}

}  // namespace addint
