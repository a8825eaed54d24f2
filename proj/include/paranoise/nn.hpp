// Parameter registry, layer modules and the Adam optimizer.
#pragma once

#include <map>
#include <memory>

#include "paranoise/autodiff.hpp"

namespace paranoise {

// Owns the named parameter list of a model. Order is registration order and
// is stable for a fixed topology, which checkpointing relies on.
struct ParamRegistry {
  std::vector<std::pair<std::string, Var>> params;
  std::vector<std::pair<std::string, Tensor*>> buffers;
  std::mt19937 rng;

  explicit ParamRegistry(uint64_t seed = 0) : rng(static_cast<unsigned>(seed)) {}

  Var add(const std::string& name, Tensor init) {
    auto v = make_leaf(std::move(init), true);
    params.emplace_back(name, v);
    return v;
  }
  void add_buffer(const std::string& name, Tensor* t) { buffers.emplace_back(name, t); }

  int64_t num_params() const {
    int64_t n = 0;
    for (auto& [name, v] : params) n += v->value.size();
    return n;
  }
  void zero_grad() {
    for (auto& [name, v] : params) v->clear_grad();
  }
};

inline Tensor kaiming_conv(std::vector<int> shape, std::mt19937& rng) {
  // fan_in = Cin * kh * kw for [Cout,Cin,kh,kw]; for transposed weights
  // [Cin,Cout,kh,kw] fan_in uses dim 0 as well, which is close enough.
  int64_t fan_in = 1;
  for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  if (shape.size() == 4) fan_in = (int64_t)shape[1] * shape[2] * shape[3];
  float std = std::sqrt(2.0f / static_cast<float>(fan_in));
  return Tensor::randn(std::move(shape), rng, std);
}

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamRegistry& reg, const std::string& path, int cin, int cout, int k, int stride,
         int pad, bool bias) : stride_(stride), pad_(pad) {
    w_ = reg.add(path + ".weight", kaiming_conv({cout, cin, k, k}, reg.rng));
    if (bias) b_ = reg.add(path + ".bias", Tensor({cout}));
  }
  Var operator()(const Var& x) const { return conv2d(x, w_, b_, stride_, pad_); }
  Var w_, b_;

 private:
  int stride_ = 1, pad_ = 0;
};

class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(ParamRegistry& reg, const std::string& path, int cin, int cout, int k,
                  int stride, int pad, int output_pad, bool bias)
      : stride_(stride), pad_(pad), opad_(output_pad) {
    w_ = reg.add(path + ".weight", kaiming_conv({cin, cout, k, k}, reg.rng));
    if (bias) b_ = reg.add(path + ".bias", Tensor({cout}));
  }
  Var operator()(const Var& x) const {
    return conv_transpose2d(x, w_, b_, stride_, pad_, opad_);
  }
  Var w_, b_;

 private:
  int stride_ = 1, pad_ = 0, opad_ = 0;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ParamRegistry& reg, const std::string& path, int channels)
      : run_mean_(std::make_unique<Tensor>(std::vector<int>{channels})),
        run_var_(std::make_unique<Tensor>(std::vector<int>{channels}, 1.0f)) {
    gamma_ = reg.add(path + ".gamma", Tensor({channels}, 1.0f));
    beta_ = reg.add(path + ".beta", Tensor({channels}));
    reg.add_buffer(path + ".running_mean", run_mean_.get());
    reg.add_buffer(path + ".running_var", run_var_.get());
  }
  Var operator()(const Var& x, bool training) const {
    return batch_norm2d(x, gamma_, beta_, *run_mean_, *run_var_, 0.1f, 1e-5f, training);
  }
  Var gamma_, beta_;
  std::unique_ptr<Tensor> run_mean_, run_var_;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParamRegistry& reg, const std::string& path, int in, int out, bool bias = true) {
    float std = std::sqrt(1.0f / static_cast<float>(in));
    w_ = reg.add(path + ".weight", Tensor::randn({out, in}, reg.rng, std));
    if (bias) b_ = reg.add(path + ".bias", Tensor({out}));
  }
  Var operator()(const Var& x) const { return linear(x, w_, b_); }
  Var w_, b_;
};

// Squeeze-and-excitation gate: GAP -> fc reduce -> ReLU -> fc expand -> sigmoid.
class SEGate {
 public:
  SEGate() = default;
  SEGate(ParamRegistry& reg, const std::string& path, int channels, int reduction) {
    if (channels % reduction != 0)
      throw std::invalid_argument("SEGate: channels " + std::to_string(channels) +
                                  " not divisible by reduction " + std::to_string(reduction));
    fc1_ = Linear(reg, path + ".fc1", channels, channels / reduction);
    fc2_ = Linear(reg, path + ".fc2", channels / reduction, channels);
  }
  Var operator()(const Var& x) const {
    Var g = sigmoid(fc2_(relu(fc1_(global_avg_pool(x)))));
    return mul_channel_gate(x, g);
  }
  Linear fc1_, fc2_;
};

// Adam with L2 weight decay folded into the gradient.
class Adam {
 public:
  Adam(ParamRegistry& reg, float weight_decay, float beta1 = 0.9f, float beta2 = 0.999f,
       float eps = 1e-8f)
      : reg_(&reg), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto& [name, v] : reg.params) {
      m_.push_back(Tensor(v->value.shape));
      v_.push_back(Tensor(v->value.shape));
    }
  }

  void step(float lr) {
    ++t_;
    float bc1 = 1.0f - std::pow(b1_, static_cast<float>(t_));
    float bc2 = 1.0f - std::pow(b2_, static_cast<float>(t_));
    for (size_t i = 0; i < reg_->params.size(); ++i) {
      auto& p = reg_->params[i].second;
      if (!p->grad_ready) continue;
      float* w = p->value.data.data();
      const float* g = p->grad.data.data();
      float* m = m_[i].data.data();
      float* v = v_[i].data.data();
      for (int64_t j = 0; j < p->value.size(); ++j) {
        float gj = g[j] + wd_ * w[j];
        m[j] = b1_ * m[j] + (1.0f - b1_) * gj;
        v[j] = b2_ * v[j] + (1.0f - b2_) * gj * gj;
        w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
      }
    }
  }

  void zero_grad() { reg_->zero_grad(); }

  int64_t step_count() const { return t_; }
  std::vector<Tensor>& moment1() { return m_; }
  std::vector<Tensor>& moment2() { return v_; }
  void set_step_count(int64_t t) { t_ = t; }

 private:
  ParamRegistry* reg_;
  float wd_, b1_, b2_, eps_;
  int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace paranoise
