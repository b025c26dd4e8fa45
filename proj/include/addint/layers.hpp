#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "addint/autodiff.hpp"
#include "addint/tensor.hpp"

namespace addint {

// A trainable tensor. `var` is rebound to a fresh tape leaf every step so the
// optimizer can find this parameter's gradient after backward().
struct Parameter {
  std::string name;
  Tensor value;
  Var var;
};

class Layer {
 public:
  virtual ~Layer() = default;
  // Create tape leaves for this layer's parameters. Must run once per tape,
  // before forward.
  virtual void bind(Tape& t);
  virtual Var forward(Tape& t, Var x) = 0;
  virtual void init(std::mt19937& rng);
  virtual std::vector<Parameter*> parameters();
  virtual void set_training(bool training);
  // Run-label letter for the mode grammar; '\0' when unlabeled.
  virtual char kind_letter() const { return '\0'; }
  virtual MulMode mode() const { return MulMode::Standard; }

 protected:
  bool training_ = true;
};

class LinearLayer : public Layer {
 public:
  LinearLayer(int64_t in, int64_t out, MulMode mode);
  Var forward(Tape& t, Var x) override;
  void init(std::mt19937& rng) override;
  std::vector<Parameter*> parameters() override;
  char kind_letter() const override { return 'f'; }
  MulMode mode() const override { return mode_; }

  Parameter w;  // [in, out]
  Parameter b;  // [out]

 private:
  int64_t in_, out_;
  MulMode mode_;
};

class Conv2dLayer : public Layer {
 public:
  Conv2dLayer(int64_t in_ch, int64_t out_ch, int kh, int kw, int stride, int pad, MulMode mode);
  Var forward(Tape& t, Var x) override;  // x: [B,C,H,W]
  void init(std::mt19937& rng) override;
  std::vector<Parameter*> parameters() override;
  char kind_letter() const override { return 'c'; }
  MulMode mode() const override { return mode_; }

  Parameter w;  // [out_ch, in_ch, kh, kw]
  Parameter b;  // [out_ch]

 private:
  int64_t in_ch_, out_ch_;
  int kh_, kw_, stride_, pad_;
  MulMode mode_;
};

class BatchNormLayer : public Layer {
 public:
  BatchNormLayer(int64_t features, MulMode mode, double eps = 1e-5, double momentum = 0.1);
  // Accepts [B,C] or [B,C,H,W]; normalizes over everything but C.
  Var forward(Tape& t, Var x) override;
  void init(std::mt19937& rng) override;
  std::vector<Parameter*> parameters() override;
  char kind_letter() const override { return 'b'; }
  MulMode mode() const override { return mode_; }

  Parameter gamma;  // [C]
  Parameter beta;   // [C]
  Tensor running_mean;
  Tensor running_var;

 private:
  Var normalize(Tape& t, Var rows, Var mean, Var var);
  int64_t features_;
  MulMode mode_;
  double eps_, momentum_;
};

class ReluLayer : public Layer {
 public:
  Var forward(Tape& t, Var x) override;
};

class FlattenLayer : public Layer {
 public:
  Var forward(Tape& t, Var x) override;  // [B, ...] -> [B, rest]
};

class Model {
 public:
  std::vector<std::unique_ptr<Layer>> layers;

  void init(std::mt19937& rng);
  void bind(Tape& t);
  Var forward(Tape& t, Var x);
  std::vector<Parameter*> parameters();
  void set_training(bool training);
};

// Mean over the batch of (logsumexp(logits_b) - logits_b[label_b]), computed
// with the mode's exp/log. Logits are shifted by s = ceil(rowmax), an integer,
// so the pseudo-exponential keeps the shift exact; the loss groups terms as
// lse + (s - picked) so integer shifts cancel bit-for-bit.
Var softmax_xent(Tape& t, Var logits, const std::vector<int64_t>& labels, MulMode mode);

int64_t count_correct(const Tensor& logits, const std::vector<int64_t>& labels);

// Flat binary dump of parameter tensors, in order. Native-endian.
void save_parameters(const std::string& path, const std::vector<Parameter*>& params);
void load_parameters(const std::string& path, std::vector<Parameter*>& params);

}  // namespace addint
