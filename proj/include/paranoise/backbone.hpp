// Multi-scale speaker embedding backbone: Res2Net / ERes2NetV2 stages with
// channel adaptation of SE decoder features, AFF, bottom-up fusion and
// two-stage attentive statistics pooling.
#pragma once

#include "paranoise/unet.hpp"

namespace paranoise {

struct SVConfig {
  // output channels of stages S1..S4; stage inputs are half of these
  std::vector<int> stage_channels{32, 64, 128, 256};
  std::vector<int> block_counts{3, 4, 6, 3};
  int scale = 2;
  int embedding_dim = 192;
  int asp_hidden = 64;

  void validate() const {
    if (stage_channels.size() != 4 || block_counts.size() != 4)
      throw std::invalid_argument("sv config: need 4 stages");
    for (size_t i = 1; i < stage_channels.size(); ++i)
      if (stage_channels[i] != 2 * stage_channels[i - 1])
        throw std::invalid_argument("sv config: channels must double per stage");
    for (int c : stage_channels)
      if (c % (2 * scale) != 0)
        throw std::invalid_argument("sv config: channels must divide the res2net scale");
  }
};

// Channel-split hierarchical residual block. Group i sees its own input plus
// (added to) the previous group's output; groups are re-fused by a 1x1 conv
// before the residual add.
class Res2NetBlock {
 public:
  Res2NetBlock() = default;
  Res2NetBlock(ParamRegistry& reg, const std::string& path, int channels, int scale)
      : channels_(channels), scale_(scale) {
    if (channels % scale != 0)
      throw std::invalid_argument("res2net: channels not divisible by scale");
    int group = channels / scale;
    for (int g = 0; g < scale; ++g) {
      std::string p = path + ".g" + std::to_string(g);
      convs_in_.emplace_back(reg, p + ".conv", group, group, 3, 1, 1, false);
      bns_.emplace_back(reg, p + ".bn", group);
    }
    fuse_ = Conv2d(reg, path + ".fuse", channels, channels, 1, 1, 0, false);
    fuse_bn_ = BatchNorm2d(reg, path + ".fuse_bn", channels);
  }

  Var operator()(const Var& x, bool training) const {
    int group = channels_ / scale_;
    std::vector<Var> groups;
    for (int g = 0; g < scale_; ++g) groups.push_back(slice_channels(x, g * group, group));
    std::vector<Var> outs;
    Var prev;
    for (int g = 0; g < scale_; ++g) {
      Var in = prev ? add(groups[g], prev) : groups[g];
      Var y = relu(bns_[g](convs_in_[g](in), training));
      outs.push_back(y);
      prev = y;
    }
    Var fused = fuse_bn_(fuse_(concat_channels(outs)), training);
    return add(x, fused);
  }

 private:
  static Var slice_channels(const Var& x, int start, int count) {
    int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
    Tensor y({N, count, H, W});
    int64_t plane = static_cast<int64_t>(H) * W;
    for (int n = 0; n < N; ++n)
      std::copy_n(&x->value.data[((int64_t)n * C + start) * plane], (int64_t)count * plane,
                  &y.data[(int64_t)n * count * plane]);
    return make_node(std::move(y), {x}, [x, N, C, start, count, plane](Node& nd) {
      auto& g = x->ensure_grad();
      for (int n = 0; n < N; ++n) {
        float* dst = &g.data[((int64_t)n * C + start) * plane];
        const float* src = &nd.grad.data[(int64_t)n * count * plane];
        for (int64_t i = 0; i < (int64_t)count * plane; ++i) dst[i] += src[i];
      }
    });
  }

  int channels_ = 0, scale_ = 1;
  std::vector<Conv2d> convs_in_;
  std::vector<BatchNorm2d> bns_;
  Conv2d fuse_;
  BatchNorm2d fuse_bn_;
};

// Adaptive feature fusion: sigmoid-gated blend of a projected shallow branch
// with a deep branch of matching shape.
class AFFFuse {
 public:
  AFFFuse() = default;
  AFFFuse(ParamRegistry& reg, const std::string& path, int c_shallow, int c_deep, int stride)
      : proj_(reg, path + ".proj", c_shallow, c_deep, 1, stride, 0, false),
        proj_bn_(reg, path + ".proj_bn", c_deep),
        gate_(reg, path + ".gate", 2 * c_deep, c_deep, 1, 1, 0, true) {}

  Var operator()(const Var& shallow, const Var& deep, bool training) const {
    Var a = proj_bn_(proj_(shallow), training);
    if (a->value.shape != deep->value.shape)
      throw std::invalid_argument("aff: shape mismatch " + shape_str(a->value.shape) +
                                  " vs " + shape_str(deep->value.shape));
    Var g = sigmoid(gate_(concat_channels({a, deep})));
    Var ones = make_leaf(Tensor(g->value.shape, 1.0f));
    return add(mul(g, a), mul(sub(ones, g), deep));
  }

  Conv2d proj_, gate_;
  BatchNorm2d proj_bn_;
};

// Two 1x1 convolutions aligning SE decoder channels to an SV stage input.
class ChannelAdapt {
 public:
  ChannelAdapt() = default;
  ChannelAdapt(ParamRegistry& reg, const std::string& path, int cin, int cout)
      : conv1_(reg, path + ".conv1", cin, cout, 1, 1, 0, true),
        conv2_(reg, path + ".conv2", cout, cout, 1, 1, 0, true) {}

  Var operator()(const Var& x) const { return conv2_(relu(conv1_(x))); }

  Conv2d conv1_, conv2_;
};

// Attentive statistics pooling over time: frequency rows are mean-pooled
// into per-frame channel vectors, attention comes from a small bottleneck,
// output is the weighted mean and std.
class AttentiveStatsPool {
 public:
  AttentiveStatsPool() = default;
  AttentiveStatsPool(ParamRegistry& reg, const std::string& path, int frame_dim, int hidden)
      : frame_dim_(frame_dim),
        att1_(reg, path + ".att1", frame_dim, hidden, 1, 1, 0, true),
        att2_(reg, path + ".att2", hidden, 1, 1, 1, 0, true) {}

  // x: [N,C,F,T] -> pooled [N, 2*C]
  Var operator()(const Var& x) const {
    int N = x->value.dim(0), C = x->value.dim(1), T = x->value.dim(3);
    if (C != frame_dim_)
      throw std::invalid_argument("asp: frame dim mismatch, got " + std::to_string(C) +
                                  " expected " + std::to_string(frame_dim_));
    Var h = mean_h(x);  // [N,C,1,T]
    Var logits = att2_(tanh_op(att1_(h)));   // [N,1,1,T]
    Var alpha = softmax_w(logits);
    Var mean = reduce_hw(mul_time_weights(h, alpha));             // [N,D]
    Var m2 = reduce_hw(mul_time_weights(mul(h, h), alpha));       // [N,D]
    Var stddev = sqrt_clamped(sub(m2, mul(mean, mean)));
    Var mean4 = reshape(mean, {N, frame_dim_, 1, 1});
    Var std4 = reshape(stddev, {N, frame_dim_, 1, 1});
    return reshape(concat_channels({mean4, std4}), {N, 2 * frame_dim_});
  }

  int frame_dim_ = 0;
  Conv2d att1_, att2_;
};

struct BackboneOutputs {
  Var initial_emb;     // [N, embedding_dim]
  Var final_emb;       // [N, embedding_dim]
  Var pooled_initial;  // [N, 2*D1]
};

// Speaker embedding extractor fed by the enhanced spectrogram plus
// channel-adapted SE decoder features at every stage input.
class SVBackbone {
 public:
  SVBackbone() = default;
  SVBackbone(ParamRegistry& reg, const std::string& path, const SVConfig& cfg,
             const UNetConfig& unet_cfg)
      : cfg_(cfg) {
    cfg.validate();
    const auto& sc = cfg.stage_channels;
    int c0 = sc[0] / 2;  // stage-C channels (16 at full width)
    init_conv_ = Conv2d(reg, path + ".init", 1, c0, 3, 1, 1, false);
    init_bn_ = BatchNorm2d(reg, path + ".init_bn", c0);

    // SE decoder features by matching stage-input resolution:
    // S1 <- D4 (full), S2 <- D3 (full), S3 <- D2 (half), S4 <- D1 (quarter)
    auto dc = unet_cfg.decoder_channels();
    int se_src[4] = {dc[3], dc[2], dc[1], dc[0]};
    int strides[4] = {1, 2, 2, 2};
    for (int i = 0; i < 4; ++i) {
      int cin = i == 0 ? c0 : sc[i - 1];
      std::string p = path + ".s" + std::to_string(i + 1);
      ca_.emplace_back(reg, p + ".ca", se_src[i], cin);
      stage_conv_.emplace_back(reg, p + ".conv", 2 * cin, sc[i], 3, strides[i], 1, false);
      stage_bn_.emplace_back(reg, p + ".bn", sc[i]);
      auto& blocks = blocks_.emplace_back();
      for (int b = 0; b < cfg.block_counts[i]; ++b)
        blocks.emplace_back(reg, p + ".block" + std::to_string(b), sc[i], cfg.scale);
    }
    aff3_ = AFFFuse(reg, path + ".aff3", sc[1], sc[2], 2);
    aff4_ = AFFFuse(reg, path + ".aff4", sc[2], sc[3], 2);
    fusion_ = AFFFuse(reg, path + ".fusion", sc[2], sc[3], 2);

    int d1 = unet_cfg.encoder_channels[4];  // SE deepest channel count
    int d2 = sc[3];
    asp_initial_ = AttentiveStatsPool(reg, path + ".asp_init", d1, cfg.asp_hidden);
    asp_final_ = AttentiveStatsPool(reg, path + ".asp_final", d2, cfg.asp_hidden);
    fc_initial_ = Linear(reg, path + ".fc_init", 2 * d1, cfg.embedding_dim);
    fc_final_ = Linear(reg, path + ".fc_final", 2 * d2 + 2 * d1, cfg.embedding_dim);
  }

  // se_out: SE network outputs; enhanced spectrogram re-enters via init conv.
  BackboneOutputs forward(const UNetOutputs& se_out, const Var& enhanced_padded,
                          bool training) const {
    BackboneOutputs out;
    out.pooled_initial = asp_initial_(se_out.deepest);
    out.initial_emb = fc_initial_(out.pooled_initial);

    // SE decoder features in stage order S1..S4 = D4,D3,D2,D1
    const Var se_feats[4] = {se_out.decoder_feats[3], se_out.decoder_feats[2],
                             se_out.decoder_feats[1], se_out.decoder_feats[0]};

    Var h = relu(init_bn_(init_conv_(enhanced_padded), training));
    std::vector<Var> stage_out;
    for (int i = 0; i < 4; ++i) {
      Var adapted = ca_[i](se_feats[i]);
      Var x = concat_channels({h, adapted});
      x = relu(stage_bn_[i](stage_conv_[i](x), training));
      for (auto& blk : blocks_[i]) x = blk(x, training);
      if (i == 2) x = aff3_(stage_out[1], x, training);
      if (i == 3) x = aff4_(stage_out[2], x, training);
      stage_out.push_back(x);
      h = x;
    }
    Var fused = fusion_(stage_out[2], stage_out[3], training);
    Var pooled_final = asp_final_(fused);
    int N = pooled_final->value.dim(0);
    Var p4a = reshape(pooled_final, {N, pooled_final->value.dim(1), 1, 1});
    Var p4b = reshape(out.pooled_initial, {N, out.pooled_initial->value.dim(1), 1, 1});
    Var both = reshape(concat_channels({p4a, p4b}),
                       {N, pooled_final->value.dim(1) + out.pooled_initial->value.dim(1)});
    out.final_emb = fc_final_(both);
    return out;
  }

  const SVConfig& config() const { return cfg_; }

 private:
  SVConfig cfg_;
  Conv2d init_conv_;
  BatchNorm2d init_bn_;
  std::vector<ChannelAdapt> ca_;
  std::vector<Conv2d> stage_conv_;
  std::vector<BatchNorm2d> stage_bn_;
  std::vector<std::vector<Res2NetBlock>> blocks_;
  AFFFuse aff3_, aff4_, fusion_;
  AttentiveStatsPool asp_initial_, asp_final_;
  Linear fc_initial_, fc_final_;
};

}  // namespace paranoise
