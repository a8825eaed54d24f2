// Dense float tensor with row-major [N, C, H, W]-style layout.
#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace paranoise {

struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel(shape), 0.0f) {}
  Tensor(std::vector<int> s, float fill) : shape(std::move(s)), data(numel(shape), fill) {}

  static int64_t numel(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("negative tensor dim");
      n *= d;
    }
    return n;
  }

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }
  int ndim() const { return static_cast<int>(shape.size()); }

  float& at(std::initializer_list<int> idx) { return data[offset(idx)]; }
  float at(std::initializer_list<int> idx) const { return data[offset(idx)]; }

  int64_t offset(std::initializer_list<int> idx) const {
    if (idx.size() != shape.size()) throw std::invalid_argument("rank mismatch");
    int64_t off = 0;
    auto it = idx.begin();
    for (size_t i = 0; i < shape.size(); ++i, ++it) off = off * shape[i] + *it;
    return off;
  }

  void fill(float v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  Tensor reshaped(std::vector<int> s) const {
    if (numel(s) != size()) throw std::invalid_argument("reshape numel mismatch");
    Tensor t;
    t.shape = std::move(s);
    t.data = data;
    return t;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, float v) { return Tensor(std::move(s), v); }

  static Tensor randn(std::vector<int> s, std::mt19937& rng, float stddev = 1.0f) {
    Tensor t(std::move(s));
    std::normal_distribution<float> d(0.0f, stddev);
    for (auto& x : t.data) x = d(rng);
    return t;
  }

  bool all_finite() const {
    for (float x : data)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string r = "[";
  for (size_t i = 0; i < s.size(); ++i) r += (i ? "x" : "") + std::to_string(s[i]);
  return r + "]";
}

}  // namespace paranoise
