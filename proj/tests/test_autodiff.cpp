// Finite-difference checks for every autodiff op the networks use.
#include <gtest/gtest.h>

#include "paranoise/autodiff.hpp"
#include "paranoise/nn.hpp"

using namespace paranoise;

namespace {

// Directional finite-difference check of a scalar-valued graph w.r.t. one
// input leaf. Rebuilds the graph per probe, so BN running-stat updates etc.
// are tolerated. Per-element central differences drown in float32 rounding
// noise; directional derivatives keep the signal large.
double max_rel_grad_error(const std::function<Var(const std::vector<Var>&)>& f,
                          std::vector<Tensor> inputs, int check_idx, float h = 1e-2f) {
  auto eval = [&](const std::vector<Tensor>& ins) {
    std::vector<Var> vars;
    for (auto& t : ins) vars.push_back(make_leaf(t, true));
    return std::make_pair(f(vars), vars);
  };
  auto [loss, vars] = eval(inputs);
  backward(loss);
  Tensor analytic = vars[check_idx]->grad_ready ? vars[check_idx]->grad
                                                : Tensor(inputs[check_idx].shape);

  std::mt19937 rng(12345);
  std::normal_distribution<float> nd(0.0f, 1.0f);
  double worst = 0.0;
  Tensor& x = inputs[check_idx];
  Tensor base = x;
  for (int probe = 0; probe < 5; ++probe) {
    Tensor dir(x.shape);
    for (auto& v : dir.data) v = nd(rng);
    double ana = 0.0;
    for (int64_t i = 0; i < x.size(); ++i) ana += (double)analytic.data[i] * dir.data[i];
    for (int64_t i = 0; i < x.size(); ++i) x.data[i] = base.data[i] + h * dir.data[i];
    double fp = eval(inputs).first->value.data[0];
    for (int64_t i = 0; i < x.size(); ++i) x.data[i] = base.data[i] - h * dir.data[i];
    double fm = eval(inputs).first->value.data[0];
    x = base;
    double num = (fp - fm) / (2.0 * h);
    double denom = std::max({std::abs(num), std::abs(ana), 0.5});
    worst = std::max(worst, std::abs(num - ana) / denom);
  }
  return worst;
}

Var sum_all(const Var& x) {
  // reduce to scalar via a quadratic so gradients are input-dependent
  Var sq = mul(x, x);
  Tensor flat = sq->value;
  Var r = reshape(sq, {1, static_cast<int>(sq->value.size()), 1, 1});
  return reshape(reduce_hw(reshape(r, {1, 1, 1, static_cast<int>(sq->value.size())})), {1});
}

std::mt19937 g_rng(7);

}  // namespace

TEST(Autodiff, Conv2dGradients) {
  Tensor x = Tensor::randn({2, 3, 6, 7}, g_rng);
  Tensor w = Tensor::randn({4, 3, 3, 3}, g_rng, 0.3f);
  Tensor b = Tensor::randn({4}, g_rng, 0.3f);
  auto f = [](const std::vector<Var>& v) {
    return sum_all(conv2d(v[0], v[1], v[2], 1, 1));
  };
  EXPECT_LT(max_rel_grad_error(f, {x, w, b}, 0), 2e-2);
  EXPECT_LT(max_rel_grad_error(f, {x, w, b}, 1), 2e-2);
  EXPECT_LT(max_rel_grad_error(f, {x, w, b}, 2), 2e-2);
}

TEST(Autodiff, Conv2dStride2Shapes) {
  Tensor x = Tensor::randn({1, 2, 8, 12}, g_rng);
  Tensor w = Tensor::randn({5, 2, 3, 3}, g_rng);
  Var y = conv2d(make_leaf(x), make_leaf(w), nullptr, 2, 1);
  EXPECT_EQ(y->value.shape, (std::vector<int>{1, 5, 4, 6}));
  auto f = [](const std::vector<Var>& v) {
    return sum_all(conv2d(v[0], v[1], nullptr, 2, 1));
  };
  EXPECT_LT(max_rel_grad_error(f, {x, w}, 0), 2e-2);
  EXPECT_LT(max_rel_grad_error(f, {x, w}, 1), 2e-2);
}

TEST(Autodiff, ConvTranspose2dGradientsAndShape) {
  Tensor x = Tensor::randn({2, 4, 4, 5}, g_rng);
  Tensor w = Tensor::randn({4, 3, 3, 3}, g_rng, 0.3f);
  Tensor b = Tensor::randn({3}, g_rng, 0.3f);
  Var y = conv_transpose2d(make_leaf(x), make_leaf(w), make_leaf(b), 2, 1, 1);
  EXPECT_EQ(y->value.shape, (std::vector<int>{2, 3, 8, 10}));
  auto f = [](const std::vector<Var>& v) {
    return sum_all(conv_transpose2d(v[0], v[1], v[2], 2, 1, 1));
  };
  EXPECT_LT(max_rel_grad_error(f, {x, w, b}, 0), 2e-2);
  EXPECT_LT(max_rel_grad_error(f, {x, w, b}, 1), 2e-2);
  EXPECT_LT(max_rel_grad_error(f, {x, w, b}, 2), 2e-2);
}

TEST(Autodiff, ConvTransposeStride1IsSameSize) {
  Tensor x = Tensor::randn({1, 2, 6, 9}, g_rng);
  Tensor w = Tensor::randn({2, 1, 3, 3}, g_rng);
  Var y = conv_transpose2d(make_leaf(x), make_leaf(w), nullptr, 1, 1, 0);
  EXPECT_EQ(y->value.shape, (std::vector<int>{1, 1, 6, 9}));
}

TEST(Autodiff, BatchNormGradients) {
  Tensor x = Tensor::randn({3, 4, 2, 5}, g_rng);
  Tensor gamma = Tensor::randn({4}, g_rng, 0.2f);
  for (auto& v : gamma.data) v += 1.0f;
  Tensor beta = Tensor::randn({4}, g_rng, 0.2f);
  Tensor rm({4}), rv({4}, 1.0f);
  auto f = [&](const std::vector<Var>& v) {
    Tensor m = rm, s = rv;  // keep probes from touching shared state
    return sum_all(batch_norm2d(v[0], v[1], v[2], m, s, 0.1f, 1e-5f, true));
  };
  EXPECT_LT(max_rel_grad_error(f, {x, gamma, beta}, 0), 2e-2);
  EXPECT_LT(max_rel_grad_error(f, {x, gamma, beta}, 1), 2e-2);
  EXPECT_LT(max_rel_grad_error(f, {x, gamma, beta}, 2), 2e-2);
}

TEST(Autodiff, BatchNormEvalUsesRunningStats) {
  Tensor x = Tensor::randn({2, 3, 4, 4}, g_rng);
  Tensor gamma({3}, 1.0f), beta({3});
  Tensor rm({3}), rv({3}, 1.0f);
  rm.data = {0.5f, -0.5f, 0.0f};
  Var y = batch_norm2d(make_leaf(x), make_leaf(gamma), make_leaf(beta), rm, rv, 0.1f, 1e-5f,
                       false);
  float expect = (x.data[0] - 0.5f) / std::sqrt(1.0f + 1e-5f);
  EXPECT_NEAR(y->value.data[0], expect, 1e-5);
  EXPECT_FLOAT_EQ(rm.data[0], 0.5f);  // eval must not update stats
}

TEST(Autodiff, ElementwiseOps) {
  Tensor a = Tensor::randn({2, 3, 2, 2}, g_rng);
  Tensor b = Tensor::randn({2, 3, 2, 2}, g_rng);
  auto f_add = [](const std::vector<Var>& v) { return sum_all(add(v[0], v[1])); };
  auto f_sub = [](const std::vector<Var>& v) { return sum_all(sub(v[0], v[1])); };
  auto f_mul = [](const std::vector<Var>& v) { return sum_all(mul(v[0], v[1])); };
  auto f_sig = [](const std::vector<Var>& v) { return sum_all(sigmoid(v[0])); };
  auto f_tanh = [](const std::vector<Var>& v) { return sum_all(tanh_op(v[0])); };
  EXPECT_LT(max_rel_grad_error(f_add, {a, b}, 0), 2e-2);
  EXPECT_LT(max_rel_grad_error(f_sub, {a, b}, 1), 2e-2);
  EXPECT_LT(max_rel_grad_error(f_mul, {a, b}, 0), 2e-2);
  EXPECT_LT(max_rel_grad_error(f_mul, {a, b}, 1), 2e-2);
  EXPECT_LT(max_rel_grad_error(f_sig, {a}, 0), 2e-2);
  EXPECT_LT(max_rel_grad_error(f_tanh, {a}, 0), 2e-2);
}

TEST(Autodiff, SelfMulDoublesGradient) {
  Tensor a({1, 1, 1, 1});
  a.data[0] = 3.0f;
  Var x = make_leaf(a, true);
  Var y = reshape(reduce_hw(mul(x, x)), {1});
  backward(y);
  EXPECT_FLOAT_EQ(x->grad.data[0], 6.0f);
}

TEST(Autodiff, ConcatNarrowRoundTrip) {
  Tensor a = Tensor::randn({2, 2, 3, 5}, g_rng);
  Tensor b = Tensor::randn({2, 3, 3, 5}, g_rng);
  auto f = [](const std::vector<Var>& v) {
    Var c = concat_channels({v[0], v[1]});
    return sum_all(narrow_w(c, 1, 3));
  };
  EXPECT_LT(max_rel_grad_error(f, {a, b}, 0), 2e-2);
  EXPECT_LT(max_rel_grad_error(f, {a, b}, 1), 2e-2);
}

TEST(Autodiff, PoolingAndGates) {
  Tensor x = Tensor::randn({2, 4, 3, 6}, g_rng);
  Tensor g = Tensor::randn({2, 4}, g_rng);
  Tensor tw = Tensor::randn({2, 1, 3, 6}, g_rng);
  auto f_gap = [](const std::vector<Var>& v) { return sum_all(global_avg_pool(v[0])); };
  auto f_gate = [](const std::vector<Var>& v) { return sum_all(mul_channel_gate(v[0], v[1])); };
  auto f_tw = [](const std::vector<Var>& v) { return sum_all(mul_time_weights(v[0], v[1])); };
  auto f_red = [](const std::vector<Var>& v) { return sum_all(reduce_hw(v[0])); };
  EXPECT_LT(max_rel_grad_error(f_gap, {x}, 0), 2e-2);
  EXPECT_LT(max_rel_grad_error(f_gate, {x, g}, 0), 2e-2);
  EXPECT_LT(max_rel_grad_error(f_gate, {x, g}, 1), 2e-2);
  EXPECT_LT(max_rel_grad_error(f_tw, {x, tw}, 0), 2e-2);
  EXPECT_LT(max_rel_grad_error(f_tw, {x, tw}, 1), 2e-2);
  EXPECT_LT(max_rel_grad_error(f_red, {x}, 0), 2e-2);
}

TEST(Autodiff, MeanOverFrequency) {
  Tensor x = Tensor::randn({2, 3, 4, 5}, g_rng);
  Var y = mean_h(make_leaf(x, true));
  ASSERT_EQ(y->value.shape, (std::vector<int>{2, 3, 1, 5}));
  // forward: plain column means
  double want = 0;
  for (int h = 0; h < 4; ++h) want += x.at({1, 2, h, 3});
  EXPECT_NEAR(y->value.at({1, 2, 0, 3}), want / 4, 1e-6);
  auto f = [](const std::vector<Var>& v) { return sum_all(mean_h(v[0])); };
  EXPECT_LT(max_rel_grad_error(f, {x}, 0), 2e-2);
}

TEST(Autodiff, SoftmaxRowsSumToOne) {
  Tensor x = Tensor::randn({2, 1, 1, 7}, g_rng);
  Var y = softmax_w(make_leaf(x, true));
  for (int n = 0; n < 2; ++n) {
    double s = 0;
    for (int i = 0; i < 7; ++i) s += y->value.data[n * 7 + i];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  auto f = [](const std::vector<Var>& v) { return sum_all(softmax_w(v[0])); };
  EXPECT_LT(max_rel_grad_error(f, {x}, 0), 2e-2);
}

TEST(Autodiff, LinearAndNormalize) {
  Tensor x = Tensor::randn({3, 5}, g_rng);
  Tensor w = Tensor::randn({4, 5}, g_rng);
  Tensor b = Tensor::randn({4}, g_rng);
  auto f = [](const std::vector<Var>& v) {
    return sum_all(l2_normalize_rows(linear(v[0], v[1], v[2])));
  };
  EXPECT_LT(max_rel_grad_error(f, {x, w, b}, 0), 2e-2);
  EXPECT_LT(max_rel_grad_error(f, {x, w, b}, 1), 2e-2);
  EXPECT_LT(max_rel_grad_error(f, {x, w, b}, 2), 2e-2);

  Var n = l2_normalize_rows(make_leaf(x));
  for (int r = 0; r < 3; ++r) {
    double s = 0;
    for (int d = 0; d < 5; ++d) s += n->value.data[r * 5 + d] * n->value.data[r * 5 + d];
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
}

TEST(Autodiff, MiscScalarOps) {
  Tensor x = Tensor::randn({2, 2, 2, 2}, g_rng);
  for (auto& v : x.data) v = std::abs(v) + 0.1f;
  Tensor w({1}, 2.0f), b({1}, -0.5f);
  auto f_sqrt = [](const std::vector<Var>& v) { return sum_all(sqrt_shift(v[0], 1e-6f)); };
  auto f_aff = [](const std::vector<Var>& v) {
    return sum_all(affine_scalar(v[0], v[1], v[2]));
  };
  auto f_relu = [](const std::vector<Var>& v) { return sum_all(relu(v[0])); };
  auto f_scale = [](const std::vector<Var>& v) { return sum_all(scale_const(v[0], 1.7f)); };
  EXPECT_LT(max_rel_grad_error(f_sqrt, {x}, 0), 2e-2);
  EXPECT_LT(max_rel_grad_error(f_aff, {x, w, b}, 0), 2e-2);
  EXPECT_LT(max_rel_grad_error(f_aff, {x, w, b}, 1), 2e-2);
  EXPECT_LT(max_rel_grad_error(f_aff, {x, w, b}, 2), 2e-2);
  EXPECT_LT(max_rel_grad_error(f_relu, {x}, 0), 2e-2);
  EXPECT_LT(max_rel_grad_error(f_scale, {x}, 0), 2e-2);
}

TEST(Autodiff, SEGateIdentityWhenSaturated) {
  ParamRegistry reg(1);
  SEGate gate(reg, "se", 8, 4);
  gate.fc2_.w_->value.fill(0.0f);
  gate.fc2_.b_->value.fill(50.0f);  // sigmoid ~ 1
  Tensor x = Tensor::randn({1, 8, 4, 4}, g_rng);
  Var y = gate(make_leaf(x));
  for (int64_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y->value.data[i], x.data[i], 1e-5);
}

TEST(Autodiff, AdamDecreasesQuadratic) {
  ParamRegistry reg(3);
  Var p = reg.add("p", Tensor::randn({8}, reg.rng));
  Adam opt(reg, 0.0f);
  double first = 0;
  for (int it = 0; it < 200; ++it) {
    opt.zero_grad();
    Var x2 = mul(p, p);
    Var loss = reshape(reduce_hw(reshape(x2, {1, 1, 1, 8})), {1});
    if (it == 0) first = loss->value.data[0];
    backward(loss);
    opt.step(0.05f);
  }
  Var x2 = mul(p, p);
  Var loss = reshape(reduce_hw(reshape(x2, {1, 1, 1, 8})), {1});
  EXPECT_LT(loss->value.data[0], 0.01 * first);
}
