#include "addint/layers.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace addint {

namespace {

// 24-bit uniform in [0,1) so runs are reproducible across standard libraries.
float next_uniform(std::mt19937& g) { return static_cast<float>(g() >> 8) * 0x1p-24f; }

void he_uniform_fill(Tensor& t, int64_t fan_in, std::mt19937& g) {
  float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  for (float& v : t.data) v = (2.0f * next_uniform(g) - 1.0f) * bound;
}

Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

}  // namespace

void Layer::bind(Tape& t) {
  for (Parameter* p : parameters()) p->var = t.leaf(p->value, true);
}
void Layer::init(std::mt19937&) {}
std::vector<Parameter*> Layer::parameters() { return {}; }
void Layer::set_training(bool training) { training_ = training; }

LinearLayer::LinearLayer(int64_t in, int64_t out, MulMode mode)
    : in_(in), out_(out), mode_(mode) {
  if (in < 1 || out < 1) throw std::invalid_argument("linear: bad dimensions");
  w.name = "linear.w";
  w.value = zeros({in, out});
  b.name = "linear.b";
  b.value = zeros({out});
}

Var LinearLayer::forward(Tape& t, Var x) {
  return t.add(t.matmul(x, w.var, mode_), b.var);
}

void LinearLayer::init(std::mt19937& rng) {
  he_uniform_fill(w.value, in_, rng);
  std::fill(b.value.data.begin(), b.value.data.end(), 0.0f);
}

std::vector<Parameter*> LinearLayer::parameters() { return {&w, &b}; }

Conv2dLayer::Conv2dLayer(int64_t in_ch, int64_t out_ch, int kh, int kw, int stride, int pad,
                         MulMode mode)
    : in_ch_(in_ch), out_ch_(out_ch), kh_(kh), kw_(kw), stride_(stride), pad_(pad), mode_(mode) {
  if (in_ch < 1 || out_ch < 1 || kh < 1 || kw < 1 || stride < 1 || pad < 0)
    throw std::invalid_argument("conv2d: bad geometry");
  w.name = "conv.w";
  w.value = zeros({out_ch, in_ch, kh, kw});
  b.name = "conv.b";
  b.value = zeros({out_ch});
}

Var Conv2dLayer::forward(Tape& t, Var x) {
  if (t.value(x).rank() == 2 && t.value(x).shape[1] % in_ch_ == 0) {
    // Flat rows (e.g. dataset batches): recover a square spatial layout.
    int64_t hw = t.value(x).shape[1] / in_ch_;
    auto side = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(hw))));
    if (side * side == hw) x = t.reshape(x, {t.value(x).shape[0], in_ch_, side, side});
  }
  const Tensor& xv = t.value(x);
  if (xv.rank() != 4 || xv.shape[1] != in_ch_)
    throw std::invalid_argument("conv2d: expected [B," + std::to_string(in_ch_) + ",H,W] input");
  int64_t batch = xv.shape[0], h = xv.shape[2], wd = xv.shape[3];
  int64_t oh = (h + 2 * pad_ - kh_) / stride_ + 1;
  int64_t ow = (wd + 2 * pad_ - kw_) / stride_ + 1;
  if (h + 2 * pad_ < kh_ || wd + 2 * pad_ < kw_)
    throw std::invalid_argument("conv2d: kernel larger than padded input");
  Var cols = t.im2col(x, kh_, kw_, stride_, pad_);
  Var wmat = t.transpose2d(t.reshape(w.var, {out_ch_, in_ch_ * kh_ * kw_}));
  Var y = t.add(t.matmul(cols, wmat, mode_), b.var);
  return t.bhwc_to_bchw(t.reshape(y, {batch, oh, ow, out_ch_}));
}

void Conv2dLayer::init(std::mt19937& rng) {
  he_uniform_fill(w.value, in_ch_ * kh_ * kw_, rng);
  std::fill(b.value.data.begin(), b.value.data.end(), 0.0f);
}

std::vector<Parameter*> Conv2dLayer::parameters() { return {&w, &b}; }

BatchNormLayer::BatchNormLayer(int64_t features, MulMode mode, double eps, double momentum)
    : features_(features), mode_(mode), eps_(eps), momentum_(momentum) {
  if (features < 1) throw std::invalid_argument("batchnorm: bad feature count");
  gamma.name = "bn.gamma";
  gamma.value = zeros({features});
  std::fill(gamma.value.data.begin(), gamma.value.data.end(), 1.0f);
  beta.name = "bn.beta";
  beta.value = zeros({features});
  running_mean = zeros({features});
  running_var = zeros({features});
  std::fill(running_var.data.begin(), running_var.data.end(), 1.0f);
}

Var BatchNormLayer::normalize(Tape& t, Var rows, Var mean, Var var) {
  Var xc = t.sub(rows, mean);
  Var std = t.sqrt_op(t.add_const(var, eps_), mode_);
  Var xhat = t.div(xc, std, mode_);
  return t.add(t.mul(xhat, gamma.var, mode_), beta.var);
}

Var BatchNormLayer::forward(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  bool spatial = xv.rank() == 4;
  if (!spatial && xv.rank() != 2) throw std::invalid_argument("batchnorm: rank must be 2 or 4");
  if (xv.shape[1] != features_) throw std::invalid_argument("batchnorm: feature mismatch");
  int64_t batch = xv.shape[0];
  Var rows = x;
  int64_t h = 0, wd = 0;
  if (spatial) {
    h = xv.shape[2];
    wd = xv.shape[3];
    rows = t.reshape(t.bchw_to_bhwc(x), {batch * h * wd, features_});
  }
  int64_t n = t.value(rows).shape[0];
  Var y;
  if (training_) {
    if (n < 2) throw std::invalid_argument("batchnorm: batch size < 2 in training mode");
    Var mean = t.scale(t.sum_axis0(rows), 1.0 / static_cast<double>(n));
    Var xc = t.sub(rows, mean);
    Var sq = t.mul(xc, xc, mode_);
    Var var = t.scale(t.sum_axis0(sq), 1.0 / static_cast<double>(n));
    const Tensor& mv = t.value(mean);
    const Tensor& vv = t.value(var);
    float m = static_cast<float>(momentum_);
    for (int64_t c = 0; c < features_; ++c) {
      running_mean.data[c] = (1.0f - m) * running_mean.data[c] + m * mv.data[c];
      running_var.data[c] = (1.0f - m) * running_var.data[c] + m * vv.data[c];
    }
    y = normalize(t, rows, mean, var);
  } else {
    Var mean = t.leaf(running_mean);
    Var var = t.leaf(running_var);
    y = normalize(t, rows, mean, var);
  }
  if (spatial) y = t.bhwc_to_bchw(t.reshape(y, {batch, h, wd, features_}));
  return y;
}

void BatchNormLayer::init(std::mt19937&) {
  std::fill(gamma.value.data.begin(), gamma.value.data.end(), 1.0f);
  std::fill(beta.value.data.begin(), beta.value.data.end(), 0.0f);
  std::fill(running_mean.data.begin(), running_mean.data.end(), 0.0f);
  std::fill(running_var.data.begin(), running_var.data.end(), 1.0f);
}

std::vector<Parameter*> BatchNormLayer::parameters() { return {&gamma, &beta}; }

Var ReluLayer::forward(Tape& t, Var x) { return t.relu(x); }

Var FlattenLayer::forward(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  if (xv.rank() < 2) throw std::invalid_argument("flatten: rank must be >= 2");
  return t.reshape(x, {xv.shape[0], xv.numel() / xv.shape[0]});
}

void Model::init(std::mt19937& rng) {
  for (auto& l : layers) l->init(rng);
}

void Model::bind(Tape& t) {
  for (auto& l : layers) l->bind(t);
}

Var Model::forward(Tape& t, Var x) {
  for (auto& l : layers) x = l->forward(t, x);
  return x;
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers)
    for (Parameter* p : l->parameters()) out.push_back(p);
  return out;
}

void Model::set_training(bool training) {
  for (auto& l : layers) l->set_training(training);
}

Var softmax_xent(Tape& t, Var logits, const std::vector<int64_t>& labels, MulMode mode) {
  const Tensor& zv = t.value(logits);
  if (zv.rank() != 2) throw std::invalid_argument("softmax_xent: logits must be [B,K]");
  int64_t batch = zv.shape[0], k = zv.shape[1];
  if (static_cast<int64_t>(labels.size()) != batch)
    throw std::invalid_argument("softmax_xent: label count mismatch");
  for (int64_t lab : labels)
    if (lab < 0 || lab >= k) throw std::out_of_range("softmax_xent: label out of range");

  Tensor s_col = Tensor{{batch, 1}, std::vector<float>(static_cast<size_t>(batch))};
  Tensor s_vec = Tensor{{batch}, std::vector<float>(static_cast<size_t>(batch))};
  for (int64_t i = 0; i < batch; ++i) {
    float m = zv.data[static_cast<size_t>(i * k)];
    for (int64_t j = 1; j < k; ++j) m = std::max(m, zv.data[static_cast<size_t>(i * k + j)]);
    float s = std::ceil(m);  // integer shift keeps the pseudo-exp consistent
    s_col.data[static_cast<size_t>(i)] = s;
    s_vec.data[static_cast<size_t>(i)] = s;
  }
  Var shifted = t.sub(logits, t.leaf(std::move(s_col)));
  Var ex = t.exp_op(shifted, mode);
  Var rowsum = t.sum_axis0(t.transpose2d(ex));
  Var lse = t.log_op(rowsum, mode);
  Var picked = t.gather_cols(logits, labels);
  // grouping (s - picked) first lets integer logit shifts cancel bit-exactly
  Var corr = t.sub(t.leaf(std::move(s_vec)), picked);
  return t.mean_all(t.add(lse, corr));
}

int64_t count_correct(const Tensor& logits, const std::vector<int64_t>& labels) {
  if (logits.rank() != 2) throw std::invalid_argument("count_correct: logits must be [B,K]");
  int64_t batch = logits.shape[0], k = logits.shape[1];
  int64_t correct = 0;
  for (int64_t i = 0; i < batch; ++i) {
    int64_t best = 0;
    float bv = logits.data[static_cast<size_t>(i * k)];
    for (int64_t j = 1; j < k; ++j) {
      float v = logits.data[static_cast<size_t>(i * k + j)];
      if (v > bv) {
        bv = v;
        best = j;
      }
    }
    if (best == labels[static_cast<size_t>(i)]) ++correct;
  }
  return correct;
}

namespace {
constexpr char kWeightMagic[8] = {'A', 'D', 'D', 'I', 'N', 'T', 'W', '1'};
}

void save_parameters(const std::string& path, const std::vector<Parameter*>& params) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_parameters: cannot open " + path);
  f.write(kWeightMagic, 8);
  uint32_t n = static_cast<uint32_t>(params.size());
  f.write(reinterpret_cast<const char*>(&n), 4);
  for (const Parameter* p : params) {
    uint32_t nl = static_cast<uint32_t>(p->name.size());
    f.write(reinterpret_cast<const char*>(&nl), 4);
    f.write(p->name.data(), nl);
    uint32_t rank = static_cast<uint32_t>(p->value.rank());
    f.write(reinterpret_cast<const char*>(&rank), 4);
    for (int64_t d : p->value.shape) f.write(reinterpret_cast<const char*>(&d), 8);
    f.write(reinterpret_cast<const char*>(p->value.data.data()),
            static_cast<std::streamsize>(p->value.data.size() * 4));
  }
  if (!f) throw std::runtime_error("save_parameters: write failed for " + path);
}

void load_parameters(const std::string& path, std::vector<Parameter*>& params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_parameters: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kWeightMagic, 8) != 0)
    throw std::runtime_error("load_parameters: bad magic in " + path);
  uint32_t n = 0;
  f.read(reinterpret_cast<char*>(&n), 4);
  if (n != params.size()) throw std::runtime_error("load_parameters: parameter count mismatch");
  for (Parameter* p : params) {
    uint32_t nl = 0;
    f.read(reinterpret_cast<char*>(&nl), 4);
    std::string name(nl, '\0');
    f.read(name.data(), nl);
    uint32_t rank = 0;
    f.read(reinterpret_cast<char*>(&rank), 4);
    std::vector<int64_t> shape(rank);
    for (uint32_t i = 0; i < rank; ++i) f.read(reinterpret_cast<char*>(&shape[i]), 8);
    if (!f || shape != p->value.shape)
      throw std::runtime_error("load_parameters: shape mismatch for " + p->name);
    f.read(reinterpret_cast<char*>(p->value.data.data()),
           static_cast<std::streamsize>(p->value.data.size() * 4));
    if (!f) throw std::runtime_error("load_parameters: truncated file " + path);
  }
}

}  // namespace addint
