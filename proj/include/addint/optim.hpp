#pragma once

// Optimizers run in ordinary float32 arithmetic; only layer math goes through
// the addition-based kernels.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "addint/tensor.hpp"

namespace addint {

class MomentumSGD {
 public:
  explicit MomentumSGD(double lr, double momentum = 0.0, double weight_decay = 0.0)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

  void step(std::vector<Tensor*> params, const std::vector<Tensor>& grads) {
    if (params.size() != grads.size()) throw std::invalid_argument("sgd: param/grad count");
    if (velocity_.empty()) {
      for (const Tensor* p : params) velocity_.push_back(Tensor{p->shape, std::vector<float>(p->data.size(), 0.0f)});
    }
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i];
      const Tensor& g = grads[i];
      if (g.data.size() != p.data.size()) throw std::invalid_argument("sgd: grad shape");
      for (size_t j = 0; j < p.data.size(); ++j) {
        float gj = g.data[j] + static_cast<float>(weight_decay_) * p.data[j];
        float v = static_cast<float>(momentum_) * velocity_[i].data[j] + gj;
        velocity_[i].data[j] = v;
        p.data[j] -= static_cast<float>(lr_) * v;
      }
    }
  }

 private:
  double lr_, momentum_, weight_decay_;
  std::vector<Tensor> velocity_;
};

class Adam {
 public:
  explicit Adam(double lr = 0.001, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::vector<Tensor*> params, const std::vector<Tensor>& grads) {
    if (params.size() != grads.size()) throw std::invalid_argument("adam: param/grad count");
    if (m_.empty()) {
      for (const Tensor* p : params) {
        m_.push_back(Tensor{p->shape, std::vector<float>(p->data.size(), 0.0f)});
        v_.push_back(Tensor{p->shape, std::vector<float>(p->data.size(), 0.0f)});
      }
    }
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i];
      const Tensor& g = grads[i];
      if (g.data.size() != p.data.size()) throw std::invalid_argument("adam: grad shape");
      for (size_t j = 0; j < p.data.size(); ++j) {
        double gj = g.data[j];
        double m = beta1_ * m_[i].data[j] + (1.0 - beta1_) * gj;
        double v = beta2_ * v_[i].data[j] + (1.0 - beta2_) * gj * gj;
        m_[i].data[j] = static_cast<float>(m);
        v_[i].data[j] = static_cast<float>(v);
        double update = lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_);
        p.data[j] -= static_cast<float>(update);
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace addint
