// The five training objectives and their unweighted sum: two spectrogram MSE
// terms, softmax cross-entropy on the initial embedding, angular prototypical
// alignment of clean/noisy final embeddings, and additive-angular-margin
// softmax against speaker prototypes.
#pragma once

#include "paranoise/nn.hpp"

namespace paranoise {

// Mean squared error over all entries; scalar output.
inline Var mse_loss(const Var& pred, const Var& target) {
  if (!pred->value.same_shape(target->value))
    throw std::invalid_argument("mse: shape mismatch " + shape_str(pred->value.shape) +
                                " vs " + shape_str(target->value.shape));
  int64_t n = pred->value.size();
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    double d = static_cast<double>(pred->value.data[i]) - target->value.data[i];
    acc += d * d;
  }
  Tensor y({1});
  y.data[0] = static_cast<float>(acc / n);
  return make_node(std::move(y), {pred, target}, [pred, target, n](Node& nd) {
    float g = nd.grad.data[0] * 2.0f / n;
    for (int64_t i = 0; i < n; ++i) {
      float d = pred->value.data[i] - target->value.data[i];
      if (pred->requires_grad) pred->ensure_grad().data[i] += g * d;
      if (target->requires_grad) target->ensure_grad().data[i] -= g * d;
    }
  });
}

// Softmax cross-entropy over logits [N,K], averaged over the batch.
inline Var cross_entropy(const Var& logits, const std::vector<int>& labels) {
  int N = logits->value.dim(0), K = logits->value.dim(1);
  if (static_cast<int>(labels.size()) != N)
    throw std::invalid_argument("cross_entropy: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= K) throw std::invalid_argument("cross_entropy: label out of range");

  // cache softmax rows for the backward pass
  auto probs = std::make_shared<std::vector<float>>(static_cast<size_t>(N) * K);
  double loss = 0;
  for (int i = 0; i < N; ++i) {
    const float* z = &logits->value.data[(int64_t)i * K];
    float* p = &(*probs)[(int64_t)i * K];
    float mx = z[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, z[k]);
    double s = 0;
    for (int k = 0; k < K; ++k) {
      p[k] = std::exp(z[k] - mx);
      s += p[k];
    }
    for (int k = 0; k < K; ++k) p[k] = static_cast<float>(p[k] / s);
    loss -= (static_cast<double>(z[labels[i]]) - mx) - std::log(s);
  }
  Tensor y({1});
  y.data[0] = static_cast<float>(loss / N);
  return make_node(std::move(y), {logits}, [logits, labels, probs, N, K](Node& nd) {
    auto& g = logits->ensure_grad();
    float scale = nd.grad.data[0] / N;
    for (int i = 0; i < N; ++i)
      for (int k = 0; k < K; ++k) {
        float p = (*probs)[(int64_t)i * K + k];
        g.data[(int64_t)i * K + k] += scale * (p - (k == labels[i] ? 1.0f : 0.0f));
      }
  });
}

// Angular prototypical loss: each noisy final embedding must be closest (in
// scaled-shifted cosine) to its own speaker's clean final embedding.
// w is clamped positive; the graph keeps the clamp so w stays learnable.
inline Var angular_prototypical(const Var& clean, const Var& noisy, const Var& w,
                                const Var& b) {
  int B = clean->value.dim(0);
  if (B < 2) throw std::invalid_argument("angular_prototypical: need >= 2 speakers");
  if (!clean->value.same_shape(noisy->value))
    throw std::invalid_argument("angular_prototypical: shape mismatch");
  Var sims = linear(l2_normalize_rows(noisy), l2_normalize_rows(clean));
  Var logits = affine_scalar(sims, clamp_min(w, 1e-3f), b);
  std::vector<int> labels(B);
  for (int i = 0; i < B; ++i) labels[i] = i;
  return cross_entropy(logits, labels);
}

// Replaces target-class cosines c by cos(theta + m), with the standard
// easy-margin fallback c - m*sin(m) once theta + m exceeds pi.
inline Var aam_margin(const Var& cosines, const std::vector<int>& labels, float margin) {
  int N = cosines->value.dim(0), K = cosines->value.dim(1);
  if (static_cast<int>(labels.size()) != N)
    throw std::invalid_argument("aam_margin: label count mismatch");
  float cos_m = std::cos(margin), sin_m = std::sin(margin);
  float fallback_thresh = std::cos(static_cast<double>(M_PI) - margin);
  float fallback_shift = margin * sin_m;

  Tensor y = cosines->value;
  for (int i = 0; i < N; ++i) {
    float& c = y.data[(int64_t)i * K + labels[i]];
    if (c > fallback_thresh) {
      float s = std::sqrt(std::max(0.0f, 1.0f - c * c));
      c = c * cos_m - s * sin_m;
    } else {
      c = c - fallback_shift;
    }
  }
  return make_node(std::move(y), {cosines},
                   [cosines, labels, N, K, cos_m, sin_m, fallback_thresh](Node& nd) {
                     auto& g = cosines->ensure_grad();
                     for (int64_t i = 0; i < nd.grad.size(); ++i) g.data[i] += nd.grad.data[i];
                     for (int i = 0; i < N; ++i) {
                       int64_t idx = (int64_t)i * K + labels[i];
                       float c = cosines->value.data[idx];
                       float d;
                       if (c > fallback_thresh) {
                         float s = std::max(std::sqrt(std::max(0.0f, 1.0f - c * c)), 1e-4f);
                         d = cos_m + c * sin_m / s;
                       } else {
                         d = 1.0f;
                       }
                       g.data[idx] += nd.grad.data[idx] * (d - 1.0f);
                     }
                   });
}

struct AAMConfig {
  float margin = 0.15f;
  float scale = 32.0f;
  int num_classes = 0;

  void validate() const {
    if (margin < 0.0f || margin >= static_cast<float>(M_PI) / 2)
      throw std::invalid_argument("aam: margin out of [0, pi/2)");
    if (scale <= 0.0f) throw std::invalid_argument("aam: scale must be positive");
    if (num_classes < 2) throw std::invalid_argument("aam: need >= 2 classes");
  }
};

// Additive-angular-margin softmax against learnable class prototypes [K,D].
inline Var aam_softmax(const Var& embs, const Var& prototypes, const std::vector<int>& labels,
                       const AAMConfig& cfg) {
  cfg.validate();
  if (prototypes->value.dim(0) != cfg.num_classes)
    throw std::invalid_argument("aam: prototype count mismatch");
  Var cosines = linear(l2_normalize_rows(embs), l2_normalize_rows(prototypes));
  Var with_margin = aam_margin(cosines, labels, cfg.margin);
  return cross_entropy(scale_const(with_margin, cfg.scale), labels);
}

struct LossBundle {
  Var l_n, l_s, l_c, l_ap, l_aam;
  Var total;
};

// Unweighted sum. Pass l_n = nullptr when the noise network is absent; it is
// reported as an exact constant 0 outside the gradient graph.
inline LossBundle total_loss(Var l_n, const Var& l_s, const Var& l_c, const Var& l_ap,
                             const Var& l_aam) {
  if (!l_n) l_n = make_leaf(Tensor({1}));
  LossBundle b{l_n, l_s, l_c, l_ap, l_aam, nullptr};
  const std::pair<const char*, Var> parts[] = {
      {"l_n", b.l_n}, {"l_s", b.l_s}, {"l_c", b.l_c}, {"l_ap", b.l_ap}, {"l_aam", b.l_aam}};
  for (auto& [name, v] : parts) {
    if (!v || v->value.size() != 1)
      throw std::invalid_argument(std::string("total_loss: ") + name + " must be scalar");
    if (!std::isfinite(v->value.data[0]))
      throw std::runtime_error(std::string("total_loss: non-finite component ") + name);
  }
  b.total = add(add(add(add(b.l_n, b.l_s), b.l_c), b.l_ap), b.l_aam);
  return b;
}

}  // namespace paranoise
