// Full model: noise-extraction and speech-enhancement U-Nets, speaker
// embedding backbone, and the classification / metric-learning heads.
#pragma once

#include "paranoise/backbone.hpp"
#include "paranoise/losses.hpp"

namespace paranoise {

struct ModelConfig {
  Variant variant = Variant::kEncOnly;
  float width_mult = 1.0f;  // scales every channel schedule, rounded to x8
  std::vector<int> unet_blocks{3, 4, 6, 3};
  std::vector<int> sv_blocks{3, 4, 6, 3};
  int embedding_dim = 192;
  int num_classes = 0;
  float aam_margin = 0.15f;
  float aam_scale = 32.0f;
  uint64_t seed = 0;

  int base_channels() const {
    int c = static_cast<int>(std::lround(16.0 * width_mult / 8.0)) * 8;
    return std::max(8, c);
  }

  UNetConfig unet_config() const {
    int c = base_channels();
    UNetConfig cfg;
    cfg.encoder_channels = {c, c, 2 * c, 4 * c, 8 * c};
    cfg.block_counts = unet_blocks;
    return cfg;
  }

  SVConfig sv_config() const {
    int c = base_channels();
    SVConfig cfg;
    cfg.stage_channels = {2 * c, 4 * c, 8 * c, 16 * c};
    cfg.block_counts = sv_blocks;
    cfg.embedding_dim = embedding_dim;
    return cfg;
  }

  void validate() const {
    if (num_classes < 2) throw std::invalid_argument("model: need >= 2 speaker classes");
    if (width_mult <= 0.0f) throw std::invalid_argument("model: width_mult must be > 0");
    if (embedding_dim <= 0) throw std::invalid_argument("model: bad embedding_dim");
    unet_config().validate();
    sv_config().validate();
    AAMConfig{aam_margin, aam_scale, num_classes}.validate();
  }
};

struct ModelOutputs {
  Var noise_estimate;   // [N,1,64,T]; null under baseline_no_ne
  Var speech_estimate;  // [N,1,64,T]
  Var initial_emb;      // [N,embedding_dim]
  Var final_emb;        // [N,embedding_dim]
  Var ce_logits;        // [N,num_classes], from the initial embedding
};

class ParaNoiseModel {
 public:
  explicit ParaNoiseModel(const ModelConfig& cfg) : cfg_(cfg), reg_(cfg.seed) {
    cfg.validate();
    UNetConfig ucfg = cfg.unet_config();
    if (has_ne(cfg.variant)) ne_ = UNet(reg_, "ne", ucfg, false, false);
    se_ = UNet(reg_, "se", ucfg, has_enc_connections(cfg.variant),
               has_dec_connections(cfg.variant));
    sv_ = SVBackbone(reg_, "sv", cfg.sv_config(), ucfg);
    ce_head_ = Linear(reg_, "head.ce", cfg.embedding_dim, cfg.num_classes);
    aam_prototypes_ = reg_.add(
        "head.aam.prototypes",
        Tensor::randn({cfg.num_classes, cfg.embedding_dim}, reg_.rng,
                      1.0f / std::sqrt(static_cast<float>(cfg.embedding_dim))));
    ap_w_ = reg_.add("head.ap.w", Tensor({1}, 10.0f));
    ap_b_ = reg_.add("head.ap.b", Tensor({1}, -5.0f));
  }

  ParaNoiseModel(const ParaNoiseModel&) = delete;
  ParaNoiseModel& operator=(const ParaNoiseModel&) = delete;

  // spec: [N,1,64,T]. Internally right-pads T to a multiple of 8 and crops
  // the spectrogram estimates back.
  ModelOutputs forward(const Tensor& spec, bool training) {
    if (spec.ndim() != 4 || spec.dim(1) != 1 || spec.dim(2) != 64)
      throw std::invalid_argument("model: expected [N,1,64,T] input, got " +
                                  shape_str(spec.shape));
    int T = spec.dim(3);
    Var x = make_leaf(pad_time_to_multiple(spec));
    int Tp = x->value.dim(3);

    UNetOutputs ne_out;
    bool use_ne = has_ne(cfg_.variant);
    if (use_ne) ne_out = ne_.forward(x, nullptr, training);
    bool connected = has_enc_connections(cfg_.variant) || has_dec_connections(cfg_.variant);
    UNetOutputs se_out = se_.forward(x, connected ? &ne_out : nullptr, training);

    auto crop = [&](const Var& v) { return Tp == T ? v : narrow_w(v, 0, T); };

    ModelOutputs out;
    if (use_ne) out.noise_estimate = crop(ne_out.estimate);
    out.speech_estimate = crop(se_out.estimate);
    BackboneOutputs bb = sv_.forward(se_out, se_out.estimate, training);
    out.initial_emb = bb.initial_emb;
    out.final_emb = bb.final_emb;
    out.ce_logits = ce_head_(out.initial_emb);
    return out;
  }

  Var ap_scale() const { return ap_w_; }
  Var ap_bias() const { return ap_b_; }
  Var aam_prototypes() const { return aam_prototypes_; }
  AAMConfig aam_config() const { return {cfg_.aam_margin, cfg_.aam_scale, cfg_.num_classes}; }

  int64_t param_count() const { return reg_.num_params(); }
  ParamRegistry& registry() { return reg_; }
  const ModelConfig& config() const { return cfg_; }

  // identifies the architecture for checkpoint compatibility checks
  std::string structural_signature() const {
    std::ostringstream os;
    os << variant_name(cfg_.variant) << ";w=" << cfg_.width_mult
       << ";emb=" << cfg_.embedding_dim << ";k=" << cfg_.num_classes << ";ub=";
    for (int b : cfg_.unet_blocks) os << b << ',';
    os << ";sb=";
    for (int b : cfg_.sv_blocks) os << b << ',';
    os << ";params=";
    for (const auto& [name, v] : reg_.params) os << name << shape_str(v->value.shape);
    return os.str();
  }

 private:
  ModelConfig cfg_;
  ParamRegistry reg_;
  UNet ne_, se_;
  SVBackbone sv_;
  Linear ce_head_;
  Var aam_prototypes_, ap_w_, ap_b_;
};

}  // namespace paranoise
