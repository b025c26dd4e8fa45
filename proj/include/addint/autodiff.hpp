#pragma once

// Reverse-mode autodiff over dense float32 tensors. Each multiplying op
// carries a MulMode choosing the kernel: Standard (true float multiply),
// ExactOp (int_mul forward, exact piecewise derivatives backward), ApproxOp
// (gamma-corrected a-ops forward, a-op-approximated gradients backward).
// A tape-wide MulFormat of BF16 makes every kernel consume and produce
// bfloat16 values while sums stay in float32.

#include <cstdint>
#include <string>
#include <vector>

#include "addint/tensor.hpp"

namespace addint {

enum class MulMode { Standard, ExactOp, ApproxOp };
enum class MulFormat { FP32, BF16 };

const char* mul_mode_name(MulMode m);
MulMode mul_mode_from_name(const std::string& s);

struct Var {
  int32_t id = -1;
};

struct Node;

class Tape {
 public:
  explicit Tape(MulFormat fmt = MulFormat::FP32);
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  MulFormat format() const { return fmt_; }
  size_t size() const;

  Var leaf(Tensor value, bool requires_grad = false);
  const Tensor& value(Var v) const;
  // Valid after backward() for nodes the loss actually reaches.
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const;

  // Elementwise, with trailing-aligned broadcasting (extent-1 dims expand).
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b, MulMode m);
  Var div(Var a, Var b, MulMode m);

  Var matmul(Var a, Var b, MulMode m);  // [M,K] x [K,N]

  Var relu(Var a);
  Var exp_op(Var a, MulMode m);   // natural base, via base-2 kernels
  Var log_op(Var a, MulMode m);   // natural base
  Var sqrt_op(Var a, MulMode m);
  Var scale(Var a, double c);     // ordinary float multiply (counts, means)
  Var add_const(Var a, double c);

  Var sum_all(Var a);
  Var mean_all(Var a);
  Var sum_axis0(Var a);  // [R,C] -> [C]
  Var gather_cols(Var a, std::vector<int64_t> cols);  // [B,K] -> [B]

  Var reshape(Var a, std::vector<int64_t> shape);
  Var transpose2d(Var a);
  Var bhwc_to_bchw(Var a);
  Var bchw_to_bhwc(Var a);
  // [B,C,H,W] -> [B*OH*OW, C*kh*kw] patch matrix with zero padding.
  Var im2col(Var a, int kh, int kw, int stride, int pad);

  // Reverse sweep from a scalar node; fills grads of reachable nodes.
  void backward(Var loss);

 private:
  Node& at(Var v);
  const Node& at(Var v) const;
  Var push(Node n);

  MulFormat fmt_;
  std::vector<Node> nodes_;
};

}  // namespace addint
