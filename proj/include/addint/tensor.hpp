#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace addint {

// Dense row-major float32 array. Gradients live on tape nodes, not here.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)), data(checked_numel(shape), 0.0f) {}
  Tensor(std::vector<int64_t> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != checked_numel(shape))
      throw std::invalid_argument("Tensor: data length does not match shape");
  }

  static int64_t checked_numel(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t e : s) {
      if (e < 0) throw std::invalid_argument("Tensor: negative extent");
      n *= e;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t dim(size_t i) const { return shape.at(i); }
  size_t rank() const { return shape.size(); }

  float& at2(int64_t i, int64_t j) { return data[i * shape[1] + j]; }
  float at2(int64_t i, int64_t j) const { return data[i * shape[1] + j]; }
};

inline Tensor scalar_tensor(float v) { return Tensor({}, {v}); }

inline Tensor full(std::vector<int64_t> shape, float v) {
  Tensor t(std::move(shape));
  for (float& x : t.data) x = v;
  return t;
}

inline bool has_nonfinite(const Tensor& t) {
  for (float x : t.data)
    if (!std::isfinite(x)) return true;
  return false;
}

inline std::string shape_str(const std::vector<int64_t>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace addint
