// NE/SE U-Nets built from SE-ResNet blocks, with configurable parallel
// connections between the two networks.
#pragma once

#include <optional>

#include "paranoise/nn.hpp"

namespace paranoise {

enum class Variant { kBaselineNoNe, kDecOnly, kEncDec, kEncOnly };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kBaselineNoNe: return "baseline_no_ne";
    case Variant::kDecOnly: return "dec_only";
    case Variant::kEncDec: return "enc_dec";
    case Variant::kEncOnly: return "enc_only";
  }
  throw std::logic_error("bad variant");
}

inline Variant variant_from_name(const std::string& s) {
  if (s == "baseline_no_ne") return Variant::kBaselineNoNe;
  if (s == "dec_only") return Variant::kDecOnly;
  if (s == "enc_dec") return Variant::kEncDec;
  if (s == "enc_only") return Variant::kEncOnly;
  throw std::invalid_argument("unknown variant: " + s);
}

inline bool has_ne(Variant v) { return v != Variant::kBaselineNoNe; }
inline bool has_enc_connections(Variant v) {
  return v == Variant::kEncOnly || v == Variant::kEncDec;
}
inline bool has_dec_connections(Variant v) {
  return v == Variant::kDecOnly || v == Variant::kEncDec;
}

struct UNetConfig {
  // initial conv (stage C) followed by E1..E4
  std::vector<int> encoder_channels{16, 16, 32, 64, 128};
  std::vector<int> block_counts{3, 4, 6, 3};
  int se_reduction = 8;

  // decoder D1..D4 channel schedule; block counts mirror the encoder reversed
  std::vector<int> decoder_channels() const {
    return {encoder_channels[3], encoder_channels[2], encoder_channels[1],
            encoder_channels[1]};
  }
  std::vector<int> decoder_blocks() const {
    return {block_counts[3], block_counts[2], block_counts[1], block_counts[0]};
  }

  void validate() const {
    if (encoder_channels.size() != 5 || block_counts.size() != 4)
      throw std::invalid_argument("unet config: need 5 encoder channels and 4 block counts");
    for (int c : encoder_channels)
      if (c <= 0 || c % se_reduction != 0)
        throw std::invalid_argument("unet config: channels must be positive multiples of "
                                    "se_reduction");
  }
};

// Residual block with squeeze-and-excitation gating on the branch output.
class SEResNetBlock {
 public:
  SEResNetBlock() = default;
  SEResNetBlock(ParamRegistry& reg, const std::string& path, int channels, int reduction)
      : conv1_(reg, path + ".conv1", channels, channels, 3, 1, 1, false),
        bn1_(reg, path + ".bn1", channels),
        conv2_(reg, path + ".conv2", channels, channels, 3, 1, 1, false),
        bn2_(reg, path + ".bn2", channels),
        se_(reg, path + ".se", channels, reduction) {}

  Var operator()(const Var& x, bool training) const {
    Var h = relu(bn1_(conv1_(x), training));
    h = bn2_(conv2_(h), training);
    h = se_(h);
    return add(x, h);
  }

  Conv2d conv1_, conv2_;
  BatchNorm2d bn1_, bn2_;
  SEGate se_;
};

// Concat of an NE feature onto the SE feature followed by a 1x1 projection
// back to the SE channel count (the parallel connection of the encoders).
class ParallelConcat {
 public:
  ParallelConcat() = default;
  ParallelConcat(ParamRegistry& reg, const std::string& path, int channels)
      : proj_(reg, path + ".proj", 2 * channels, channels, 1, 1, 0, true) {}

  Var operator()(const Var& s, const Var& n) const {
    if (s->value.dim(2) != n->value.dim(2) || s->value.dim(3) != n->value.dim(3) ||
        s->value.dim(1) != n->value.dim(1))
      throw std::invalid_argument("parallel_concat: stage shape mismatch " +
                                  shape_str(s->value.shape) + " vs " +
                                  shape_str(n->value.shape));
    return proj_(concat_channels({s, n}));
  }

  Conv2d proj_;
};

struct EncoderStage {
  EncoderStage() = default;
  EncoderStage(ParamRegistry& reg, const std::string& path, int cin, int cout, int stride,
               int blocks, int reduction, bool parallel)
      : conv(reg, path + ".conv", cin, cout, 3, stride, 1, false),
        bn(reg, path + ".bn", cout) {
    if (parallel) concat = ParallelConcat(reg, path + ".pc", cin);
    for (int b = 0; b < blocks; ++b)
      resblocks.emplace_back(reg, path + ".block" + std::to_string(b), cout, reduction);
  }

  Var forward(Var x, const Var& ne_feat, bool training) const {
    if (ne_feat) x = (*concat)(x, ne_feat);
    x = relu(bn(conv(x), training));
    for (auto& blk : resblocks) x = blk(x, training);
    return x;
  }

  std::optional<ParallelConcat> concat;
  Conv2d conv;
  BatchNorm2d bn;
  std::vector<SEResNetBlock> resblocks;
};

struct DecoderStage {
  DecoderStage() = default;
  // skip_ch: encoder skip channels; ne_ch: NE decoder feature channels (0 = none)
  DecoderStage(ParamRegistry& reg, const std::string& path, int cin, int cout, int skip_ch,
               int ne_ch, bool upsample, int blocks, int reduction) {
    if (upsample)
      up_t = ConvTranspose2d(reg, path + ".up", cin, cout, 3, 2, 1, 1, false);
    else
      up_c = Conv2d(reg, path + ".conv", cin, cout, 3, 1, 1, false);
    up_bn = BatchNorm2d(reg, path + ".up_bn", cout);
    proj = Conv2d(reg, path + ".proj", cout + skip_ch + ne_ch, cout, 1, 1, 0, false);
    proj_bn = BatchNorm2d(reg, path + ".proj_bn", cout);
    for (int b = 0; b < blocks; ++b)
      resblocks.emplace_back(reg, path + ".block" + std::to_string(b), cout, reduction);
  }

  Var forward(Var x, const Var& skip, const Var& ne_feat, bool training) const {
    x = up_t.w_ ? up_t(x) : up_c(x);
    x = relu(up_bn(x, training));
    std::vector<Var> cat{x, skip};
    if (ne_feat) cat.push_back(ne_feat);
    x = relu(proj_bn(proj(concat_channels(cat)), training));
    for (auto& blk : resblocks) x = blk(x, training);
    return x;
  }

  ConvTranspose2d up_t;
  Conv2d up_c;
  BatchNorm2d up_bn;
  Conv2d proj;
  BatchNorm2d proj_bn;
  std::vector<SEResNetBlock> resblocks;
};

struct UNetOutputs {
  Var estimate;                    // [N,1,64,Tp]
  std::vector<Var> encoder_feats;  // stages C,E1..E4
  std::vector<Var> decoder_feats;  // stages D1..D4
  Var deepest;                     // stage E4
};

// Encoder-decoder with depth 4. The NE net runs standalone; the SE net can
// consume NE encoder features at encoder stage inputs (enc connections) and
// NE decoder features at decoder stages (dec connections).
class UNet {
 public:
  UNet() = default;
  UNet(ParamRegistry& reg, const std::string& path, const UNetConfig& cfg, bool enc_conn,
       bool dec_conn)
      : cfg_(cfg), enc_conn_(enc_conn), dec_conn_(dec_conn) {
    cfg.validate();
    const auto& ec = cfg.encoder_channels;
    init_conv_ = Conv2d(reg, path + ".init", 1, ec[0], 3, 1, 1, false);
    init_bn_ = BatchNorm2d(reg, path + ".init_bn", ec[0]);
    int strides[4] = {1, 2, 2, 2};
    for (int i = 0; i < 4; ++i)
      enc_.emplace_back(reg, path + ".e" + std::to_string(i + 1), ec[i], ec[i + 1],
                        strides[i], cfg.block_counts[i], cfg.se_reduction, enc_conn);
    auto dc = cfg.decoder_channels();
    auto db = cfg.decoder_blocks();
    // skip at decoder step i is encoder stage 4-i; D1..D3 upsample, D4 keeps
    // resolution (three downsamples pair with three upsamples)
    int dins[4] = {ec[4], dc[0], dc[1], dc[2]};
    int skips[4] = {ec[3], ec[2], ec[1], ec[0]};
    for (int i = 0; i < 4; ++i)
      dec_.emplace_back(reg, path + ".d" + std::to_string(i + 1), dins[i], dc[i], skips[i],
                        dec_conn ? dc[i] : 0, i < 3, db[i], cfg.se_reduction);
    final_ = ConvTranspose2d(reg, path + ".t", dc[3] + ec[0], 1, 3, 1, 1, 0, true);
  }

  // ne_out must be present iff a connection flag is set.
  UNetOutputs forward(const Var& x, const UNetOutputs* ne_out, bool training) const {
    if ((enc_conn_ || dec_conn_) != (ne_out != nullptr))
      throw std::invalid_argument("unet: variant/ne_out wiring mismatch");
    if (x->value.dim(1) != 1) throw std::invalid_argument("unet: expected 1 input channel");
    if (x->value.dim(3) % 8 != 0)
      throw std::invalid_argument("unet: time axis must be padded to a multiple of 8");

    UNetOutputs out;
    Var h = relu(init_bn_(init_conv_(x), training));
    out.encoder_feats.push_back(h);
    for (int i = 0; i < 4; ++i) {
      h = enc_[i].forward(h, enc_conn_ ? ne_out->encoder_feats[i] : nullptr, training);
      out.encoder_feats.push_back(h);
    }
    out.deepest = h;

    for (int i = 0; i < 4; ++i) {
      h = dec_[i].forward(h, out.encoder_feats[4 - (i + 1)],
                          dec_conn_ ? ne_out->decoder_feats[i] : nullptr, training);
      out.decoder_feats.push_back(h);
    }
    out.estimate = final_(concat_channels({h, out.encoder_feats[0]}));
    return out;
  }

  const UNetConfig& config() const { return cfg_; }

 private:
  UNetConfig cfg_;
  bool enc_conn_ = false, dec_conn_ = false;
  Conv2d init_conv_;
  BatchNorm2d init_bn_;
  std::vector<EncoderStage> enc_;
  std::vector<DecoderStage> dec_;
  ConvTranspose2d final_;
};

// Right-pads the time axis to a multiple of 8 with the per-sample minimum.
inline Tensor pad_time_to_multiple(const Tensor& x, int multiple = 8) {
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (W < 8)
    throw std::invalid_argument("input too short: T=" + std::to_string(W) + " < 8 frames");
  int Wp = (W + multiple - 1) / multiple * multiple;
  if (Wp == W) return x;
  Tensor y({N, C, H, Wp});
  for (int n = 0; n < N; ++n) {
    float mn = x.data[(int64_t)n * C * H * W];
    for (int64_t i = 0; i < (int64_t)C * H * W; ++i)
      mn = std::min(mn, x.data[(int64_t)n * C * H * W + i]);
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h) {
        const float* src = &x.data[(((int64_t)n * C + c) * H + h) * W];
        float* dst = &y.data[(((int64_t)n * C + c) * H + h) * Wp];
        std::copy_n(src, W, dst);
        std::fill(dst + W, dst + Wp, mn);
      }
  }
  return y;
}

}  // namespace paranoise
