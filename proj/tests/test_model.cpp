#include <gtest/gtest.h>

#include "paranoise/model.hpp"

using namespace paranoise;

namespace {

ModelConfig smoke_cfg(Variant v) {
  ModelConfig cfg;
  cfg.variant = v;
  cfg.width_mult = 0.5f;
  cfg.unet_blocks = {1, 1, 1, 1};
  cfg.sv_blocks = {1, 1, 1, 1};
  cfg.num_classes = 8;
  cfg.seed = 3;
  return cfg;
}

Tensor randn_spec(int N, int T, uint64_t seed) {
  std::mt19937 rng(static_cast<unsigned>(seed));
  return Tensor::randn({N, 1, 64, T}, rng);
}

}  // namespace

TEST(ModelConfigTest, WidthScalingKeepsSchedules) {
  ModelConfig cfg = smoke_cfg(Variant::kEncOnly);
  EXPECT_EQ(cfg.base_channels(), 8);
  EXPECT_EQ(cfg.unet_config().encoder_channels, (std::vector<int>{8, 8, 16, 32, 64}));
  EXPECT_EQ(cfg.sv_config().stage_channels, (std::vector<int>{16, 32, 64, 128}));
  cfg.width_mult = 1.0f;
  EXPECT_EQ(cfg.unet_config().encoder_channels, (std::vector<int>{16, 16, 32, 64, 128}));
  EXPECT_EQ(cfg.sv_config().stage_channels, (std::vector<int>{32, 64, 128, 256}));
}

TEST(ModelConfigTest, RejectsBadSettings) {
  ModelConfig cfg = smoke_cfg(Variant::kEncOnly);
  cfg.num_classes = 1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = smoke_cfg(Variant::kEncOnly);
  cfg.width_mult = 0.0f;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Model, ParameterCountInBudget) {
  ModelConfig cfg;
  cfg.variant = Variant::kEncOnly;
  cfg.num_classes = 1211;
  cfg.seed = 1;
  ParaNoiseModel model(cfg);
  double count = static_cast<double>(model.param_count());
  double target = 7.75e6;
  EXPECT_GE(count, target * 0.85) << count;
  EXPECT_LE(count, target * 1.15) << count;
}

TEST(Model, EstimatesMatchInputLengthAcrossT) {
  ParaNoiseModel model(smoke_cfg(Variant::kEncOnly));
  for (int T : {8, 100, 200, 301}) {
    auto out = model.forward(randn_spec(2, T, T), false);
    EXPECT_EQ(out.speech_estimate->value.shape, (std::vector<int>{2, 1, 64, T})) << T;
    EXPECT_EQ(out.noise_estimate->value.shape, (std::vector<int>{2, 1, 64, T})) << T;
    EXPECT_EQ(out.initial_emb->value.shape, (std::vector<int>{2, 192})) << T;
    EXPECT_EQ(out.final_emb->value.shape, (std::vector<int>{2, 192})) << T;
    EXPECT_EQ(out.ce_logits->value.shape, (std::vector<int>{2, 8})) << T;
    EXPECT_TRUE(out.final_emb->value.all_finite());
  }
}

TEST(Model, AllVariantsForwardAndWireCorrectly) {
  for (Variant v : {Variant::kBaselineNoNe, Variant::kDecOnly, Variant::kEncDec,
                    Variant::kEncOnly}) {
    ParaNoiseModel model(smoke_cfg(v));
    auto out = model.forward(randn_spec(1, 48, 9), false);
    EXPECT_EQ(static_cast<bool>(out.noise_estimate), has_ne(v)) << variant_name(v);
    EXPECT_TRUE(out.speech_estimate->value.all_finite()) << variant_name(v);
  }
}

TEST(Model, VariantsDifferInSignatureAndSize) {
  std::vector<std::string> sigs;
  std::vector<int64_t> sizes;
  for (Variant v : {Variant::kBaselineNoNe, Variant::kDecOnly, Variant::kEncDec,
                    Variant::kEncOnly}) {
    ParaNoiseModel model(smoke_cfg(v));
    sigs.push_back(model.structural_signature());
    sizes.push_back(model.param_count());
  }
  for (size_t i = 0; i < sigs.size(); ++i)
    for (size_t j = i + 1; j < sigs.size(); ++j) EXPECT_NE(sigs[i], sigs[j]);
  EXPECT_LT(sizes[0], sizes[1]);  // baseline lacks the NE net entirely
  EXPECT_GT(sizes[2], sizes[1]);  // enc+dec adds the encoder projections
  EXPECT_GT(sizes[2], sizes[3]);
}

TEST(Model, DeterministicInitAndForward) {
  ParaNoiseModel a(smoke_cfg(Variant::kDecOnly));
  ParaNoiseModel b(smoke_cfg(Variant::kDecOnly));
  ASSERT_EQ(a.param_count(), b.param_count());
  for (size_t i = 0; i < a.registry().params.size(); ++i)
    ASSERT_EQ(a.registry().params[i].second->value.data,
              b.registry().params[i].second->value.data)
        << a.registry().params[i].first;
  Tensor x = randn_spec(2, 56, 17);
  auto oa = a.forward(x, false), ob = b.forward(x, false);
  EXPECT_EQ(oa.final_emb->value.data, ob.final_emb->value.data);
}

TEST(Model, JointLossReachesNearlyEveryParameter) {
  ParaNoiseModel model(smoke_cfg(Variant::kEncOnly));
  int N = 4, T = 100;
  Tensor noisy = randn_spec(N, T, 21), clean = randn_spec(N, T, 22);
  Tensor noise_t = randn_spec(N, T, 23);
  std::vector<int> labels{0, 3, 5, 7};

  auto out_n = model.forward(noisy, true);
  auto out_c = model.forward(clean, true);
  Var l_n = mse_loss(out_n.noise_estimate, make_leaf(noise_t));
  Var l_s = mse_loss(out_n.speech_estimate, make_leaf(clean));
  Var l_c = scale_const(add(cross_entropy(out_n.ce_logits, labels),
                            cross_entropy(out_c.ce_logits, labels)),
                        0.5f);
  Var l_ap = angular_prototypical(out_c.final_emb, out_n.final_emb, model.ap_scale(),
                                  model.ap_bias());
  Var l_aam = scale_const(
      add(aam_softmax(out_n.final_emb, model.aam_prototypes(), labels, model.aam_config()),
          aam_softmax(out_c.final_emb, model.aam_prototypes(), labels, model.aam_config())),
      0.5f);
  auto bundle = total_loss(l_n, l_s, l_c, l_ap, l_aam);
  EXPECT_TRUE(std::isfinite(bundle.total->value.data[0]));
  backward(bundle.total);

  int64_t total = 0, nonzero = 0;
  for (auto& [name, p] : model.registry().params) {
    total += p->value.size();
    if (!p->grad_ready) continue;
    for (float g : p->grad.data)
      if (g != 0.0f) ++nonzero;
  }
  EXPECT_GE(static_cast<double>(nonzero) / total, 0.99)
      << nonzero << " of " << total << " parameter elements received gradient";
}
