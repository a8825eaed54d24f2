// Reverse-mode autodiff over float tensors. Graphs are built per forward
// pass; parameters are long-lived leaves whose gradients accumulate until
// cleared by the optimizer.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>

#include "paranoise/tensor.hpp"

namespace paranoise {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool grad_ready = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad() {
    if (!grad_ready) {
      grad = Tensor(value.shape);
      grad_ready = true;
    }
    return grad;
  }
  void clear_grad() {
    grad_ready = false;
    grad = Tensor();
  }
};

using Var = std::shared_ptr<Node>;

inline Var make_leaf(Tensor value, bool requires_grad = false) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

inline Var make_node(Tensor value, std::vector<Var> parents,
                     std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  return n;
}

// Runs backprop from a scalar node.
inline void backward(const Var& loss) {
  if (loss->value.size() != 1) throw std::logic_error("backward: loss must be scalar");
  if (!loss->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack{{loss.get(), 0}};
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  loss->ensure_grad().data[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad_ready) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise and shape ops
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value)) throw std::invalid_argument("add: shape mismatch");
  Tensor y = a->value;
  for (int64_t i = 0; i < y.size(); ++i) y.data[i] += b->value.data[i];
  return make_node(std::move(y), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) {
      auto& g = a->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) g.data[i] += n.grad.data[i];
    }
    if (b->requires_grad) {
      auto& g = b->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) g.data[i] += n.grad.data[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value)) throw std::invalid_argument("sub: shape mismatch");
  Tensor y = a->value;
  for (int64_t i = 0; i < y.size(); ++i) y.data[i] -= b->value.data[i];
  return make_node(std::move(y), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) {
      auto& g = a->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) g.data[i] += n.grad.data[i];
    }
    if (b->requires_grad) {
      auto& g = b->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) g.data[i] -= n.grad.data[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value)) throw std::invalid_argument("mul: shape mismatch");
  Tensor y = a->value;
  for (int64_t i = 0; i < y.size(); ++i) y.data[i] *= b->value.data[i];
  return make_node(std::move(y), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) {
      auto& g = a->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) g.data[i] += n.grad.data[i] * b->value.data[i];
    }
    if (b->requires_grad) {
      auto& g = b->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) g.data[i] += n.grad.data[i] * a->value.data[i];
    }
  });
}

inline Var scale_const(const Var& a, float c) {
  Tensor y = a->value;
  for (auto& v : y.data) v *= c;
  return make_node(std::move(y), {a}, [a, c](Node& n) {
    auto& g = a->ensure_grad();
    for (int64_t i = 0; i < g.size(); ++i) g.data[i] += c * n.grad.data[i];
  });
}

inline Var relu(const Var& a) {
  Tensor y = a->value;
  for (auto& v : y.data) v = v > 0.0f ? v : 0.0f;
  return make_node(std::move(y), {a}, [a](Node& n) {
    auto& g = a->ensure_grad();
    for (int64_t i = 0; i < g.size(); ++i)
      if (n.value.data[i] > 0.0f) g.data[i] += n.grad.data[i];
  });
}

inline Var sigmoid(const Var& a) {
  Tensor y = a->value;
  for (auto& v : y.data) v = 1.0f / (1.0f + std::exp(-v));
  return make_node(std::move(y), {a}, [a](Node& n) {
    auto& g = a->ensure_grad();
    for (int64_t i = 0; i < g.size(); ++i) {
      float s = n.value.data[i];
      g.data[i] += n.grad.data[i] * s * (1.0f - s);
    }
  });
}

inline Var tanh_op(const Var& a) {
  Tensor y = a->value;
  for (auto& v : y.data) v = std::tanh(v);
  return make_node(std::move(y), {a}, [a](Node& n) {
    auto& g = a->ensure_grad();
    for (int64_t i = 0; i < g.size(); ++i) {
      float t = n.value.data[i];
      g.data[i] += n.grad.data[i] * (1.0f - t * t);
    }
  });
}

// y = sqrt(x + eps)
inline Var sqrt_shift(const Var& a, float eps) {
  Tensor y = a->value;
  for (auto& v : y.data) v = std::sqrt(v + eps);
  return make_node(std::move(y), {a}, [a](Node& n) {
    auto& g = a->ensure_grad();
    for (int64_t i = 0; i < g.size(); ++i)
      g.data[i] += n.grad.data[i] * 0.5f / n.value.data[i];
  });
}

// y = sqrt(max(x, 0)); gradient is floored near zero instead of blowing up.
inline Var sqrt_clamped(const Var& a, float grad_floor = 1e-6f) {
  Tensor y = a->value;
  for (auto& v : y.data) v = v > 0.0f ? std::sqrt(v) : 0.0f;
  return make_node(std::move(y), {a}, [a, grad_floor](Node& n) {
    auto& g = a->ensure_grad();
    for (int64_t i = 0; i < g.size(); ++i)
      if (a->value.data[i] > 0.0f)
        g.data[i] += n.grad.data[i] * 0.5f / std::max(n.value.data[i], grad_floor);
  });
}

inline Var clamp_min(const Var& a, float lo) {
  Tensor y = a->value;
  for (auto& v : y.data) v = v < lo ? lo : v;
  return make_node(std::move(y), {a, }, [a, lo](Node& n) {
    auto& g = a->ensure_grad();
    for (int64_t i = 0; i < g.size(); ++i)
      if (a->value.data[i] > lo) g.data[i] += n.grad.data[i];
  });
}

inline Var reshape(const Var& a, std::vector<int> shape) {
  Tensor y = a->value.reshaped(shape);
  return make_node(std::move(y), {a}, [a](Node& n) {
    auto& g = a->ensure_grad();
    for (int64_t i = 0; i < g.size(); ++i) g.data[i] += n.grad.data[i];
  });
}

// Channel-wise concat of [N,Ci,H,W] maps.
inline Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat: empty");
  int N = xs[0]->value.dim(0), H = xs[0]->value.dim(2), W = xs[0]->value.dim(3);
  int Ctot = 0;
  for (auto& x : xs) {
    if (x->value.ndim() != 4 || x->value.dim(0) != N || x->value.dim(2) != H ||
        x->value.dim(3) != W)
      throw std::invalid_argument("concat: spatial/batch mismatch " + shape_str(x->value.shape));
    Ctot += x->value.dim(1);
  }
  Tensor y({N, Ctot, H, W});
  int64_t plane = static_cast<int64_t>(H) * W;
  for (int n = 0; n < N; ++n) {
    int64_t off = static_cast<int64_t>(n) * Ctot * plane;
    for (auto& x : xs) {
      int64_t sz = static_cast<int64_t>(x->value.dim(1)) * plane;
      std::copy_n(&x->value.data[static_cast<int64_t>(n) * sz], sz, &y.data[off]);
      off += sz;
    }
  }
  std::vector<Var> parents = xs;
  return make_node(std::move(y), parents, [parents, N, Ctot, plane](Node& n) {
    for (int b = 0; b < N; ++b) {
      int64_t off = static_cast<int64_t>(b) * Ctot * plane;
      for (auto& x : parents) {
        int64_t sz = static_cast<int64_t>(x->value.dim(1)) * plane;
        if (x->requires_grad) {
          auto& g = x->ensure_grad();
          for (int64_t i = 0; i < sz; ++i)
            g.data[static_cast<int64_t>(b) * sz + i] += n.grad.data[off + i];
        }
        off += sz;
      }
    }
  });
}

// Slice along the last (time) axis.
inline Var narrow_w(const Var& a, int start, int len) {
  int N = a->value.dim(0), C = a->value.dim(1), H = a->value.dim(2), W = a->value.dim(3);
  if (start < 0 || start + len > W) throw std::invalid_argument("narrow_w: out of range");
  Tensor y({N, C, H, len});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h) {
        const float* src = &a->value.data[(((int64_t)n * C + c) * H + h) * W + start];
        float* dst = &y.data[(((int64_t)n * C + c) * H + h) * len];
        std::copy_n(src, len, dst);
      }
  return make_node(std::move(y), {a}, [a, N, C, H, W, start, len](Node& n) {
    auto& g = a->ensure_grad();
    for (int b = 0; b < N; ++b)
      for (int c = 0; c < C; ++c)
        for (int h = 0; h < H; ++h) {
          float* dst = &g.data[(((int64_t)b * C + c) * H + h) * W + start];
          const float* src = &n.grad.data[(((int64_t)b * C + c) * H + h) * len];
          for (int i = 0; i < len; ++i) dst[i] += src[i];
        }
  });
}

// Mean over H,W: [N,C,H,W] -> [N,C]
inline Var global_avg_pool(const Var& a) {
  int N = a->value.dim(0), C = a->value.dim(1), H = a->value.dim(2), W = a->value.dim(3);
  int64_t plane = static_cast<int64_t>(H) * W;
  Tensor y({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const float* p = &a->value.data[((int64_t)n * C + c) * plane];
      double s = 0;
      for (int64_t i = 0; i < plane; ++i) s += p[i];
      y.data[(int64_t)n * C + c] = static_cast<float>(s / plane);
    }
  return make_node(std::move(y), {a}, [a, N, C, plane](Node& n) {
    auto& g = a->ensure_grad();
    for (int b = 0; b < N; ++b)
      for (int c = 0; c < C; ++c) {
        float gv = n.grad.data[(int64_t)b * C + c] / plane;
        float* p = &g.data[((int64_t)b * C + c) * plane];
        for (int64_t i = 0; i < plane; ++i) p[i] += gv;
      }
  });
}

// x [N,C,H,W] scaled per-channel by gate [N,C].
inline Var mul_channel_gate(const Var& x, const Var& gate) {
  int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  if (gate->value.shape != std::vector<int>{N, C})
    throw std::invalid_argument("mul_channel_gate: gate shape");
  int64_t plane = static_cast<int64_t>(H) * W;
  Tensor y = x->value;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      float s = gate->value.data[(int64_t)n * C + c];
      float* p = &y.data[((int64_t)n * C + c) * plane];
      for (int64_t i = 0; i < plane; ++i) p[i] *= s;
    }
  return make_node(std::move(y), {x, gate}, [x, gate, N, C, plane](Node& n) {
    for (int b = 0; b < N; ++b)
      for (int c = 0; c < C; ++c) {
        int64_t base = ((int64_t)b * C + c) * plane;
        float s = gate->value.data[(int64_t)b * C + c];
        if (x->requires_grad) {
          auto& gx = x->ensure_grad();
          for (int64_t i = 0; i < plane; ++i) gx.data[base + i] += n.grad.data[base + i] * s;
        }
        if (gate->requires_grad) {
          double acc = 0;
          for (int64_t i = 0; i < plane; ++i)
            acc += (double)n.grad.data[base + i] * x->value.data[base + i];
          gate->ensure_grad().data[(int64_t)b * C + c] += static_cast<float>(acc);
        }
      }
  });
}

// x [N,C,H,W] scaled per-(n,h,w) by a [N,1,H,W] (broadcast over channels).
inline Var mul_time_weights(const Var& x, const Var& a) {
  int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  if (a->value.shape != std::vector<int>{N, 1, H, W})
    throw std::invalid_argument("mul_time_weights: weight shape");
  int64_t plane = static_cast<int64_t>(H) * W;
  Tensor y = x->value;
  for (int n = 0; n < N; ++n) {
    const float* w = &a->value.data[(int64_t)n * plane];
    for (int c = 0; c < C; ++c) {
      float* p = &y.data[((int64_t)n * C + c) * plane];
      for (int64_t i = 0; i < plane; ++i) p[i] *= w[i];
    }
  }
  return make_node(std::move(y), {x, a}, [x, a, N, C, plane](Node& n) {
    for (int b = 0; b < N; ++b) {
      const float* w = &a->value.data[(int64_t)b * plane];
      for (int c = 0; c < C; ++c) {
        int64_t base = ((int64_t)b * C + c) * plane;
        if (x->requires_grad) {
          auto& gx = x->ensure_grad();
          for (int64_t i = 0; i < plane; ++i) gx.data[base + i] += n.grad.data[base + i] * w[i];
        }
        if (a->requires_grad) {
          auto& ga = a->ensure_grad();
          for (int64_t i = 0; i < plane; ++i)
            ga.data[(int64_t)b * plane + i] += n.grad.data[base + i] * x->value.data[base + i];
        }
      }
    }
  });
}

// Mean over H: [N,C,H,W] -> [N,C,1,W]
inline Var mean_h(const Var& a) {
  int N = a->value.dim(0), C = a->value.dim(1), H = a->value.dim(2), W = a->value.dim(3);
  Tensor y({N, C, 1, W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int w = 0; w < W; ++w) {
        double s = 0;
        for (int h = 0; h < H; ++h) s += a->value.data[(((int64_t)n * C + c) * H + h) * W + w];
        y.data[((int64_t)n * C + c) * W + w] = static_cast<float>(s / H);
      }
  return make_node(std::move(y), {a}, [a, N, C, H, W](Node& n) {
    auto& g = a->ensure_grad();
    for (int b = 0; b < N; ++b)
      for (int c = 0; c < C; ++c)
        for (int w = 0; w < W; ++w) {
          float gv = n.grad.data[((int64_t)b * C + c) * W + w] / H;
          for (int h = 0; h < H; ++h)
            g.data[(((int64_t)b * C + c) * H + h) * W + w] += gv;
        }
  });
}

// Sum over H,W: [N,C,H,W] -> [N,C]
inline Var reduce_hw(const Var& a) {
  int N = a->value.dim(0), C = a->value.dim(1);
  int64_t plane = static_cast<int64_t>(a->value.dim(2)) * a->value.dim(3);
  Tensor y({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const float* p = &a->value.data[((int64_t)n * C + c) * plane];
      double s = 0;
      for (int64_t i = 0; i < plane; ++i) s += p[i];
      y.data[(int64_t)n * C + c] = static_cast<float>(s);
    }
  return make_node(std::move(y), {a}, [a, N, C, plane](Node& n) {
    auto& g = a->ensure_grad();
    for (int b = 0; b < N; ++b)
      for (int c = 0; c < C; ++c) {
        float gv = n.grad.data[(int64_t)b * C + c];
        float* p = &g.data[((int64_t)b * C + c) * plane];
        for (int64_t i = 0; i < plane; ++i) p[i] += gv;
      }
  });
}

// Softmax over the last axis, per (n,c,h) row.
inline Var softmax_w(const Var& a) {
  int W = a->value.dim(a->value.ndim() - 1);
  int64_t rows = a->value.size() / W;
  Tensor y = a->value;
  for (int64_t r = 0; r < rows; ++r) {
    float* p = &y.data[r * W];
    float mx = p[0];
    for (int i = 1; i < W; ++i) mx = std::max(mx, p[i]);
    double s = 0;
    for (int i = 0; i < W; ++i) {
      p[i] = std::exp(p[i] - mx);
      s += p[i];
    }
    for (int i = 0; i < W; ++i) p[i] = static_cast<float>(p[i] / s);
  }
  return make_node(std::move(y), {a}, [a, rows, W](Node& n) {
    auto& g = a->ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const float* yv = &n.value.data[r * W];
      const float* gy = &n.grad.data[r * W];
      double dot = 0;
      for (int i = 0; i < W; ++i) dot += (double)yv[i] * gy[i];
      for (int i = 0; i < W; ++i) g.data[r * W + i] += yv[i] * (gy[i] - static_cast<float>(dot));
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra ops
// ---------------------------------------------------------------------------

// y[N,K] = x[N,D] * w[K,D]^T (+ b[K])
inline Var linear(const Var& x, const Var& w, const Var& b = nullptr) {
  int N = x->value.dim(0), D = x->value.dim(1), K = w->value.dim(0);
  if (w->value.dim(1) != D) throw std::invalid_argument("linear: dim mismatch");
  Tensor y({N, K});
  CMapMat X(x->value.data.data(), N, D), Wm(w->value.data.data(), K, D);
  MapMat Y(y.data.data(), N, K);
  Y.noalias() = X * Wm.transpose();
  if (b) {
    if (b->value.shape != std::vector<int>{K}) throw std::invalid_argument("linear: bias shape");
    for (int n = 0; n < N; ++n)
      for (int k = 0; k < K; ++k) y.data[(int64_t)n * K + k] += b->value.data[k];
  }
  std::vector<Var> parents{x, w};
  if (b) parents.push_back(b);
  return make_node(std::move(y), parents, [x, w, b, N, D, K](Node& n) {
    CMapMat G(n.grad.data.data(), N, K);
    if (x->requires_grad) {
      CMapMat Wm(w->value.data.data(), K, D);
      MapMat GX(x->ensure_grad().data.data(), N, D);
      GX.noalias() += G * Wm;
    }
    if (w->requires_grad) {
      CMapMat X(x->value.data.data(), N, D);
      MapMat GW(w->ensure_grad().data.data(), K, D);
      GW.noalias() += G.transpose() * X;
    }
    if (b && b->requires_grad) {
      auto& gb = b->ensure_grad();
      for (int i = 0; i < N; ++i)
        for (int k = 0; k < K; ++k) gb.data[k] += n.grad.data[(int64_t)i * K + k];
    }
  });
}

// Row-wise L2 normalization of [N,D].
inline Var l2_normalize_rows(const Var& x, float eps = 1e-12f) {
  int N = x->value.dim(0), D = x->value.dim(1);
  Tensor y = x->value;
  std::vector<float> norms(N);
  for (int n = 0; n < N; ++n) {
    double s = 0;
    float* p = &y.data[(int64_t)n * D];
    for (int d = 0; d < D; ++d) s += (double)p[d] * p[d];
    float nm = static_cast<float>(std::sqrt(s)) + eps;
    norms[n] = nm;
    for (int d = 0; d < D; ++d) p[d] /= nm;
  }
  return make_node(std::move(y), {x}, [x, norms, N, D](Node& n) {
    auto& g = x->ensure_grad();
    for (int b = 0; b < N; ++b) {
      const float* yv = &n.value.data[(int64_t)b * D];
      const float* gy = &n.grad.data[(int64_t)b * D];
      double dot = 0;
      for (int d = 0; d < D; ++d) dot += (double)yv[d] * gy[d];
      for (int d = 0; d < D; ++d)
        g.data[(int64_t)b * D + d] += (gy[d] - static_cast<float>(dot) * yv[d]) / norms[b];
    }
  });
}

// Elementwise y = w*x + b with scalar parameters w,b of shape [1].
inline Var affine_scalar(const Var& x, const Var& w, const Var& b) {
  float wv = w->value.data[0], bv = b->value.data[0];
  Tensor y = x->value;
  for (auto& v : y.data) v = wv * v + bv;
  return make_node(std::move(y), {x, w, b}, [x, w, b, wv](Node& n) {
    if (x->requires_grad) {
      auto& g = x->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) g.data[i] += wv * n.grad.data[i];
    }
    if (w->requires_grad) {
      double s = 0;
      for (int64_t i = 0; i < n.grad.size(); ++i)
        s += (double)n.grad.data[i] * x->value.data[i];
      w->ensure_grad().data[0] += static_cast<float>(s);
    }
    if (b->requires_grad) {
      double s = 0;
      for (int64_t i = 0; i < n.grad.size(); ++i) s += n.grad.data[i];
      b->ensure_grad().data[0] += static_cast<float>(s);
    }
  });
}

// ---------------------------------------------------------------------------
// Convolutions (im2col + GEMM)
// ---------------------------------------------------------------------------

namespace detail {

// Gathers k x k patches of src (C x H x W) at an Hg x Wg grid into
// col (C*kh*kw x Hg*Wg). Grid cell (a,b) samples src at (a*s-p+i, b*s-p+j).
inline void im2col(const float* src, int C, int H, int W, int kh, int kw, int stride, int pad,
                   int Hg, int Wg, float* col) {
  int64_t gsz = static_cast<int64_t>(Hg) * Wg;
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < kh; ++i)
      for (int j = 0; j < kw; ++j) {
        float* dst = col + ((static_cast<int64_t>(c) * kh + i) * kw + j) * gsz;
        for (int a = 0; a < Hg; ++a) {
          int h = a * stride - pad + i;
          if (h < 0 || h >= H) {
            std::fill_n(dst + static_cast<int64_t>(a) * Wg, Wg, 0.0f);
            continue;
          }
          const float* row = src + (static_cast<int64_t>(c) * H + h) * W;
          for (int b = 0; b < Wg; ++b) {
            int w = b * stride - pad + j;
            dst[static_cast<int64_t>(a) * Wg + b] = (w >= 0 && w < W) ? row[w] : 0.0f;
          }
        }
      }
}

// Scatter-add inverse of im2col.
inline void col2im_add(const float* col, int C, int H, int W, int kh, int kw, int stride,
                       int pad, int Hg, int Wg, float* dst) {
  int64_t gsz = static_cast<int64_t>(Hg) * Wg;
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < kh; ++i)
      for (int j = 0; j < kw; ++j) {
        const float* src = col + ((static_cast<int64_t>(c) * kh + i) * kw + j) * gsz;
        for (int a = 0; a < Hg; ++a) {
          int h = a * stride - pad + i;
          if (h < 0 || h >= H) continue;
          float* row = dst + (static_cast<int64_t>(c) * H + h) * W;
          for (int b = 0; b < Wg; ++b) {
            int w = b * stride - pad + j;
            if (w >= 0 && w < W) row[w] += src[static_cast<int64_t>(a) * Wg + b];
          }
        }
      }
}

}  // namespace detail

// x [N,Cin,H,W], w [Cout,Cin,kh,kw], optional b [Cout].
inline Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  int N = x->value.dim(0), Cin = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  int Cout = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
  if (w->value.dim(1) != Cin)
    throw std::invalid_argument("conv2d: channel mismatch " + shape_str(x->value.shape) +
                                " vs " + shape_str(w->value.shape));
  int Ho = (H + 2 * pad - kh) / stride + 1;
  int Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: input too small");
  int ckk = Cin * kh * kw;
  int64_t gsz = static_cast<int64_t>(Ho) * Wo;

  Tensor y({N, Cout, Ho, Wo});
  std::vector<float> col(static_cast<size_t>(ckk) * gsz);
  CMapMat Wm(w->value.data.data(), Cout, ckk);
  for (int n = 0; n < N; ++n) {
    detail::im2col(&x->value.data[(int64_t)n * Cin * H * W], Cin, H, W, kh, kw, stride, pad,
                   Ho, Wo, col.data());
    CMapMat Col(col.data(), ckk, gsz);
    MapMat Y(&y.data[(int64_t)n * Cout * gsz], Cout, gsz);
    Y.noalias() = Wm * Col;
  }
  if (b) {
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < Cout; ++c) {
        float bv = b->value.data[c];
        float* p = &y.data[((int64_t)n * Cout + c) * gsz];
        for (int64_t i = 0; i < gsz; ++i) p[i] += bv;
      }
  }
  std::vector<Var> parents{x, w};
  if (b) parents.push_back(b);
  return make_node(std::move(y), parents,
                   [x, w, b, N, Cin, H, W, Cout, kh, kw, stride, pad, Ho, Wo, ckk,
                    gsz](Node& n) {
                     std::vector<float> col(static_cast<size_t>(ckk) * gsz);
                     for (int s = 0; s < N; ++s) {
                       CMapMat G(&n.grad.data[(int64_t)s * Cout * gsz], Cout, gsz);
                       if (w->requires_grad) {
                         detail::im2col(&x->value.data[(int64_t)s * Cin * H * W], Cin, H, W, kh,
                                        kw, stride, pad, Ho, Wo, col.data());
                         CMapMat Col(col.data(), ckk, gsz);
                         MapMat GW(w->ensure_grad().data.data(), Cout, ckk);
                         GW.noalias() += G * Col.transpose();
                       }
                       if (x->requires_grad) {
                         MapMat Col(col.data(), ckk, gsz);
                         CMapMat Wm(w->value.data.data(), Cout, ckk);
                         Col.noalias() = Wm.transpose() * G;
                         detail::col2im_add(col.data(), Cin, H, W, kh, kw, stride, pad, Ho, Wo,
                                            &x->ensure_grad().data[(int64_t)s * Cin * H * W]);
                       }
                       if (b && b->requires_grad) {
                         auto& gb = b->ensure_grad();
                         for (int c = 0; c < Cout; ++c) {
                           double acc = 0;
                           const float* p = &n.grad.data[((int64_t)s * Cout + c) * gsz];
                           for (int64_t i = 0; i < gsz; ++i) acc += p[i];
                           gb.data[c] += static_cast<float>(acc);
                         }
                       }
                     }
                   });
}

// x [N,Cin,H,W], w [Cin,Cout,kh,kw], optional b [Cout].
// out = (in-1)*stride - 2*pad + k + output_padding
inline Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad,
                            int output_padding) {
  int N = x->value.dim(0), Cin = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  if (w->value.dim(0) != Cin) throw std::invalid_argument("conv_transpose2d: channel mismatch");
  int Cout = w->value.dim(1), kh = w->value.dim(2), kw = w->value.dim(3);
  int Ho = (H - 1) * stride - 2 * pad + kh + output_padding;
  int Wo = (W - 1) * stride - 2 * pad + kw + output_padding;
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv_transpose2d: input too small");
  int ckk = Cout * kh * kw;
  int64_t in_sz = static_cast<int64_t>(H) * W;
  int64_t out_sz = static_cast<int64_t>(Ho) * Wo;

  Tensor y({N, Cout, Ho, Wo});
  std::vector<float> col(static_cast<size_t>(ckk) * in_sz);
  CMapMat Wm(w->value.data.data(), Cin, ckk);
  for (int n = 0; n < N; ++n) {
    CMapMat X(&x->value.data[(int64_t)n * Cin * in_sz], Cin, in_sz);
    MapMat Col(col.data(), ckk, in_sz);
    Col.noalias() = Wm.transpose() * X;
    detail::col2im_add(col.data(), Cout, Ho, Wo, kh, kw, stride, pad, H, W,
                       &y.data[(int64_t)n * Cout * out_sz]);
  }
  if (b) {
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < Cout; ++c) {
        float bv = b->value.data[c];
        float* p = &y.data[((int64_t)n * Cout + c) * out_sz];
        for (int64_t i = 0; i < out_sz; ++i) p[i] += bv;
      }
  }
  std::vector<Var> parents{x, w};
  if (b) parents.push_back(b);
  return make_node(
      std::move(y), parents,
      [x, w, b, N, Cin, Cout, H, W, Ho, Wo, kh, kw, stride, pad, ckk, in_sz, out_sz](Node& n) {
        std::vector<float> col(static_cast<size_t>(ckk) * in_sz);
        for (int s = 0; s < N; ++s) {
          detail::im2col(&n.grad.data[(int64_t)s * Cout * out_sz], Cout, Ho, Wo, kh, kw, stride,
                         pad, H, W, col.data());
          CMapMat Col(col.data(), ckk, in_sz);
          if (x->requires_grad) {
            CMapMat Wm(w->value.data.data(), Cin, ckk);
            MapMat GX(&x->ensure_grad().data[(int64_t)s * Cin * in_sz], Cin, in_sz);
            GX.noalias() += Wm * Col;
          }
          if (w->requires_grad) {
            CMapMat X(&x->value.data[(int64_t)s * Cin * in_sz], Cin, in_sz);
            MapMat GW(w->ensure_grad().data.data(), Cin, ckk);
            GW.noalias() += X * Col.transpose();
          }
          if (b && b->requires_grad) {
            auto& gb = b->ensure_grad();
            for (int c = 0; c < Cout; ++c) {
              double acc = 0;
              const float* p = &n.grad.data[((int64_t)s * Cout + c) * out_sz];
              for (int64_t i = 0; i < out_sz; ++i) acc += p[i];
              gb.data[c] += static_cast<float>(acc);
            }
          }
        }
      });
}

// Batch norm over (N,H,W) per channel. Running stats live outside the graph.
inline Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& run_mean,
                        Tensor& run_var, float momentum, float eps, bool training) {
  int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  int64_t plane = static_cast<int64_t>(H) * W;
  int64_t m = static_cast<int64_t>(N) * plane;

  std::vector<float> mean(C), invstd(C);
  if (training) {
    for (int c = 0; c < C; ++c) {
      double s = 0, s2 = 0;
      for (int n = 0; n < N; ++n) {
        const float* p = &x->value.data[((int64_t)n * C + c) * plane];
        for (int64_t i = 0; i < plane; ++i) {
          s += p[i];
          s2 += (double)p[i] * p[i];
        }
      }
      double mu = s / m;
      double var = std::max(0.0, s2 / m - mu * mu);
      mean[c] = static_cast<float>(mu);
      invstd[c] = static_cast<float>(1.0 / std::sqrt(var + eps));
      run_mean.data[c] = (1.0f - momentum) * run_mean.data[c] + momentum * mean[c];
      run_var.data[c] = (1.0f - momentum) * run_var.data[c] + momentum * static_cast<float>(var);
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = run_mean.data[c];
      invstd[c] = 1.0f / std::sqrt(run_var.data[c] + eps);
    }
  }

  Tensor y({N, C, H, W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      float g = gamma->value.data[c], bt = beta->value.data[c];
      const float* p = &x->value.data[((int64_t)n * C + c) * plane];
      float* q = &y.data[((int64_t)n * C + c) * plane];
      for (int64_t i = 0; i < plane; ++i) q[i] = g * (p[i] - mean[c]) * invstd[c] + bt;
    }

  return make_node(std::move(y), {x, gamma, beta},
                   [x, gamma, beta, mean, invstd, N, C, plane, m, training](Node& n) {
                     for (int c = 0; c < C; ++c) {
                       double sum_g = 0, sum_gx = 0;
                       for (int b = 0; b < N; ++b) {
                         const float* gp = &n.grad.data[((int64_t)b * C + c) * plane];
                         const float* xp = &x->value.data[((int64_t)b * C + c) * plane];
                         for (int64_t i = 0; i < plane; ++i) {
                           sum_g += gp[i];
                           sum_gx += (double)gp[i] * (xp[i] - mean[c]) * invstd[c];
                         }
                       }
                       if (gamma->requires_grad)
                         gamma->ensure_grad().data[c] += static_cast<float>(sum_gx);
                       if (beta->requires_grad)
                         beta->ensure_grad().data[c] += static_cast<float>(sum_g);
                       if (x->requires_grad) {
                         auto& gx = x->ensure_grad();
                         float gm = gamma->value.data[c];
                         float mg = static_cast<float>(sum_g / m);
                         float mgx = static_cast<float>(sum_gx / m);
                         for (int b = 0; b < N; ++b) {
                           const float* gp = &n.grad.data[((int64_t)b * C + c) * plane];
                           const float* xp = &x->value.data[((int64_t)b * C + c) * plane];
                           float* dp = &gx.data[((int64_t)b * C + c) * plane];
                           if (training) {
                             for (int64_t i = 0; i < plane; ++i) {
                               float xhat = (xp[i] - mean[c]) * invstd[c];
                               dp[i] += gm * invstd[c] * (gp[i] - mg - xhat * mgx);
                             }
                           } else {
                             for (int64_t i = 0; i < plane; ++i) dp[i] += gm * invstd[c] * gp[i];
                           }
                         }
                       }
                     }
                   });
}

}  // namespace paranoise
