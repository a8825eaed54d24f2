// Training loop: feature assembly, the five-term joint loss over paired
// clean/noisy batches, warmup + cosine schedule, per-epoch and best-by-
// validation-EER checkpoints, and the four-variant ablation driver.
#pragma once

#include <iomanip>
#include <iostream>
#include <set>

#include "paranoise/checkpoint.hpp"
#include "paranoise/eval.hpp"
#include "paranoise/features.hpp"

namespace paranoise {

// Linear warmup to lr_peak at the end of warmup_epochs, then cosine decay to
// zero at the end of training. `step` counts completed optimizer steps.
inline float learning_rate_at(const RunConfig& cfg, int64_t step) {
  double e = static_cast<double>(step + 1) / cfg.steps_per_epoch;  // fractional epoch
  double w = cfg.warmup_epochs;
  if (e <= w) return static_cast<float>(cfg.lr_peak * e / w);
  if (cfg.epochs <= cfg.warmup_epochs) return cfg.lr_peak;
  double frac = (e - w) / (cfg.epochs - w);
  frac = std::min(1.0, frac);
  return static_cast<float>(cfg.lr_peak * 0.5 * (1.0 + std::cos(M_PI * frac)));
}

// [B,1,64,T] from per-utterance feature maps; all maps must agree on shape.
inline Tensor stack_features(const std::vector<LogMelSpectrogram>& feats) {
  if (feats.empty()) throw std::invalid_argument("stack_features: empty batch");
  int F = feats[0].num_mels(), T = feats[0].num_frames();
  Tensor out({static_cast<int>(feats.size()), 1, F, T});
  for (size_t i = 0; i < feats.size(); ++i) {
    if (feats[i].values.dim(0) != F || feats[i].values.dim(1) != T)
      throw std::invalid_argument("stack_features: ragged batch");
    std::copy(feats[i].values.data.begin(), feats[i].values.data.end(),
              out.data.begin() + static_cast<int64_t>(i) * F * T);
  }
  return out;
}

struct StepStats {
  double l_n = 0, l_s = 0, l_c = 0, l_ap = 0, l_aam = 0, total = 0;
};

// Builds the joint loss for one paired batch. Two forward passes: one on the
// clean crops, one on the noisy mixes. The reconstruction terms supervise the
// noisy pass against instance-normalized log-mel targets; the classification
// and margin terms average both passes; the metric term ties the two passes'
// final embeddings together. SpecAugment only touches the noisy model input
// and only while training.
inline LossBundle batch_losses(ParaNoiseModel& model, const TrainingBatch& batch,
                               const FrontendConfig& fcfg, bool training,
                               std::mt19937& aug_rng) {
  std::vector<LogMelSpectrogram> clean_in, noisy_in, noise_tgt;
  std::vector<int> labels;
  SpecAugmentPolicy aug;
  for (const BatchItem& item : batch.items) {
    LogMelSpectrogram c = instance_normalize(compute_log_mel(item.clean, fcfg));
    LogMelSpectrogram n = instance_normalize(compute_log_mel(item.noisy, fcfg));
    noise_tgt.push_back(instance_normalize(compute_log_mel(item.scaled_noise, fcfg)));
    clean_in.push_back(c);
    noisy_in.push_back(training ? spec_augment(n, aug, aug_rng) : std::move(n));
    labels.push_back(item.label);
  }

  ModelOutputs out_c = model.forward(stack_features(clean_in), training);
  ModelOutputs out_n = model.forward(stack_features(noisy_in), training);

  Var speech_target = make_leaf(stack_features(clean_in));
  Var noise_target = make_leaf(stack_features(noise_tgt));

  Var l_n = out_n.noise_estimate ? mse_loss(out_n.noise_estimate, noise_target) : nullptr;
  Var l_s = mse_loss(out_n.speech_estimate, speech_target);
  Var l_c = scale_const(
      add(cross_entropy(out_c.ce_logits, labels), cross_entropy(out_n.ce_logits, labels)),
      0.5f);
  Var l_ap = angular_prototypical(out_c.final_emb, out_n.final_emb, model.ap_scale(),
                                  model.ap_bias());
  AAMConfig acfg = model.aam_config();
  Var l_aam = scale_const(
      add(aam_softmax(out_c.final_emb, model.aam_prototypes(), labels, acfg),
          aam_softmax(out_n.final_emb, model.aam_prototypes(), labels, acfg)),
      0.5f);
  return total_loss(l_n, l_s, l_c, l_ap, l_aam);
}

// Embeds a clean or mixed waveform for trial scoring: log-mel, instance
// normalization, eval-mode forward, final embedding of the single-item batch.
inline Embedder make_embedder(ParaNoiseModel& model,
                              const FrontendConfig& fcfg = FrontendConfig{}) {
  return [&model, fcfg](const Waveform& w) {
    LogMelSpectrogram s = instance_normalize(compute_log_mel(w, fcfg));
    ModelOutputs out = model.forward(stack_features({s}), false);
    const Tensor& e = out.final_emb->value;
    return std::vector<float>(e.data.begin(), e.data.end());
  };
}

// All-pairs trials over a record list, deterministically capped. Targets are
// same-speaker pairs.
inline std::vector<Trial> make_trials(const std::vector<ManifestRecord>& recs,
                                      size_t max_trials = 500, uint64_t seed = 0) {
  std::vector<Trial> out;
  for (size_t i = 0; i < recs.size(); ++i)
    for (size_t j = i + 1; j < recs.size(); ++j) {
      Trial t;
      t.label = recs[i].speaker_id == recs[j].speaker_id;
      t.enroll_path = recs[i].audio_path;
      t.test_path = recs[j].audio_path;
      out.push_back(t);
    }
  if (out.size() > max_trials) {
    std::mt19937 rng(static_cast<unsigned>(seed ^ 0x9e3779b9u));
    std::shuffle(out.begin(), out.end(), rng);
    out.resize(max_trials);
  }
  return out;
}

struct TrainResult {
  std::vector<StepStats> steps;       // one entry per optimizer step
  std::vector<double> val_eers;       // one entry per epoch; empty if no val split
  double best_val_eer = -1.0;
  int64_t best_epoch = -1;
  std::string best_checkpoint;
  std::string last_checkpoint;
  int num_classes = 0;
};

class Trainer {
 public:
  explicit Trainer(RunConfig cfg, AudioLoader loader = read_wav)
      : cfg_(std::move(cfg)), load_(std::move(loader)) {
    cfg_.validate();
    if (cfg_.train_manifest.empty()) {
      if (cfg_.synth_dir.empty())
        throw std::invalid_argument("trainer: set data.train_manifest or data.synth_dir");
      SynthPaths p = generate_synthetic_corpus(cfg_.synth_dir, SynthConfig{});
      cfg_.train_manifest = p.train_manifest;
      cfg_.noise_manifest = p.noise_manifest;
    }
    all_records_ = load_manifest(cfg_.train_manifest);
    noise_records_ = load_manifest(cfg_.noise_manifest);
    split_speakers();
    if (cfg_.model.num_classes == 0)
      cfg_.model.num_classes = SpeakerIndex(train_records_).num_speakers();
    cfg_.model.seed = cfg_.seed;
  }

  const RunConfig& config() const { return cfg_; }
  const std::vector<ManifestRecord>& train_records() const { return train_records_; }
  const std::vector<ManifestRecord>& val_records() const { return val_records_; }
  const std::vector<ManifestRecord>& noise_records() const { return noise_records_; }

  // One optimizer step with a deterministically derived batch seed. Throws
  // with the step index and batch seed if any loss term goes non-finite.
  StepStats step(ParaNoiseModel& model, Adam& opt, int64_t global_step) {
    uint64_t batch_seed =
        cfg_.seed * 6364136223846793005ULL + static_cast<uint64_t>(global_step) + 1;
    std::mt19937 rng(static_cast<unsigned>(batch_seed));
    TrainingBatch batch =
        build_batch(train_records_, noise_records_, speakers_, cfg_.batch, rng, load_);
    LossBundle bundle;
    try {
      bundle = batch_losses(model, batch, fcfg_, true, rng);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("training aborted at step " + std::to_string(global_step) +
                               " (batch seed " + std::to_string(batch_seed) +
                               "): " + e.what());
    }
    model.registry().zero_grad();
    backward(bundle.total);
    opt.step(learning_rate_at(cfg_, global_step));
    StepStats s;
    s.l_n = bundle.l_n->value.data[0];
    s.l_s = bundle.l_s->value.data[0];
    s.l_c = bundle.l_c->value.data[0];
    s.l_ap = bundle.l_ap->value.data[0];
    s.l_aam = bundle.l_aam->value.data[0];
    s.total = bundle.total->value.data[0];
    return s;
  }

  double validation_eer(ParaNoiseModel& model) {
    std::vector<Trial> trials = make_trials(val_records_, 200, cfg_.seed);
    Embedder embed = make_embedder(model, fcfg_);
    ConditionReport rep =
        run_trials(embed, trials, noise_records_, {{true, NoiseCategory::kNoise, 0.0}},
                   cfg_.seed, load_);
    return rep.results[0].eer_percent;
  }

  TrainResult run(std::ostream& log, const std::string& resume_from = "") {
    namespace fs = std::filesystem;
    fs::create_directories(cfg_.out_dir);
    ParaNoiseModel model(cfg_.model);
    Adam opt(model.registry(), cfg_.weight_decay);
    int64_t start_epoch = 0;
    if (!resume_from.empty()) {
      CheckpointMeta meta = load_checkpoint(resume_from, model, &opt);
      start_epoch = meta.epoch;
    }

    TrainResult res;
    res.num_classes = cfg_.model.num_classes;
    log << "step\tl_n\tl_s\tl_c\tl_ap\tl_aam\ttotal\tlr\n";
    log.setf(std::ios::fixed);
    for (int64_t epoch = start_epoch; epoch < cfg_.epochs; ++epoch) {
      for (int64_t k = 0; k < cfg_.steps_per_epoch; ++k) {
        int64_t gs = epoch * cfg_.steps_per_epoch + k;
        StepStats s = step(model, opt, gs);
        res.steps.push_back(s);
        log << gs << '\t' << std::setprecision(6) << s.l_n << '\t' << s.l_s << '\t'
            << s.l_c << '\t' << s.l_ap << '\t' << s.l_aam << '\t' << s.total << '\t'
            << learning_rate_at(cfg_, gs) << '\n';
      }
      std::ostringstream name;
      name << "epoch_" << std::setw(3) << std::setfill('0') << (epoch + 1) << ".pnsv";
      std::string path = (fs::path(cfg_.out_dir) / name.str()).string();
      save_checkpoint(path, model, cfg_, epoch + 1, &opt);
      res.last_checkpoint = path;

      if (!val_records_.empty()) {
        double eer = validation_eer(model);
        res.val_eers.push_back(eer);
        log << "# epoch " << (epoch + 1) << " val clean EER " << std::setprecision(3)
            << eer << "%\n";
        if (res.best_epoch < 0 || eer < res.best_val_eer) {
          res.best_val_eer = eer;
          res.best_epoch = epoch + 1;
          res.best_checkpoint = (fs::path(cfg_.out_dir) / "best.pnsv").string();
          save_checkpoint(res.best_checkpoint, model, cfg_, epoch + 1, &opt);
        }
      }
    }
    if (res.best_checkpoint.empty()) res.best_checkpoint = res.last_checkpoint;
    return res;
  }

 private:
  // Holds out ~val_fraction of speakers for best-checkpoint selection. Falls
  // back to no split when the corpus cannot spare two speakers and still fill
  // a batch.
  void split_speakers() {
    std::map<std::string, std::vector<const ManifestRecord*>> by_speaker;
    for (const auto& r : all_records_) by_speaker[r.speaker_id].push_back(&r);
    int total = static_cast<int>(by_speaker.size());
    int n_val = static_cast<int>(std::lround(total * cfg_.val_fraction));
    if (cfg_.val_fraction > 0.0) n_val = std::max(1, n_val);
    if (n_val < 2 || total - n_val < cfg_.batch.batch_speakers) {
      if (cfg_.val_fraction > 0.0 && total - 2 >= cfg_.batch.batch_speakers)
        n_val = 2;  // smallest split that still yields nontarget trials
      else
        n_val = 0;
    }
    std::vector<std::string> ids;
    for (auto& [id, recs] : by_speaker) ids.push_back(id);
    std::mt19937 rng(static_cast<unsigned>(cfg_.seed ^ 0x5f3759dfu));
    std::shuffle(ids.begin(), ids.end(), rng);
    std::set<std::string> val_ids(ids.begin(), ids.begin() + n_val);
    for (const auto& r : all_records_)
      (val_ids.count(r.speaker_id) ? val_records_ : train_records_).push_back(r);
    speakers_ = SpeakerIndex(train_records_);
  }

  RunConfig cfg_;
  AudioLoader load_;
  FrontendConfig fcfg_;
  std::vector<ManifestRecord> all_records_, train_records_, val_records_, noise_records_;
  SpeakerIndex speakers_;
};

// --- ablation over the four wiring variants ----------------------------------

struct AblationRow {
  Variant variant;
  int64_t param_count = 0;
  double clean_eer_percent = 0.0;
  double average_eer_percent = 0.0;
};

inline std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os << "variant          params     clean EER%  avg EER%\n";
  for (const auto& r : rows)
    os << std::left << std::setw(16) << variant_name(r.variant) << ' ' << std::right
       << std::setw(10) << r.param_count << ' ' << std::setw(10) << std::setprecision(3)
       << r.clean_eer_percent << ' ' << std::setw(9) << r.average_eer_percent << '\n';
  return os.str();
}

// Trains and evaluates every variant under the same seed and config; each run
// writes into <out_dir>/<variant>/.
inline std::vector<AblationRow> run_ablation(
    const RunConfig& base, std::ostream& log,
    const std::vector<EvalCondition>& conditions = {{true, NoiseCategory::kNoise, 0.0}},
    const AudioLoader& loader = read_wav) {
  namespace fs = std::filesystem;
  std::vector<AblationRow> rows;
  for (Variant v : {Variant::kBaselineNoNe, Variant::kDecOnly, Variant::kEncDec,
                    Variant::kEncOnly}) {
    RunConfig cfg = base;
    cfg.model.variant = v;
    cfg.out_dir = (fs::path(base.out_dir) / variant_name(v)).string();
    log << "== " << variant_name(v) << " ==\n";
    Trainer trainer(cfg, loader);
    TrainResult res = trainer.run(log);

    ParaNoiseModel model(trainer.config().model);
    load_checkpoint(res.best_checkpoint, model);
    const auto& eval_recs = trainer.val_records().empty() ? trainer.train_records()
                                                          : trainer.val_records();
    std::vector<Trial> trials = make_trials(eval_recs, 300, cfg.seed);
    ConditionReport rep = run_trials(make_embedder(model), trials,
                                     trainer.noise_records(), conditions, cfg.seed, loader);
    AblationRow row;
    row.variant = v;
    row.param_count = model.param_count();
    for (const auto& r : rep.results)
      if (r.condition.clean) row.clean_eer_percent = r.eer_percent;
    row.average_eer_percent = rep.average_eer_percent();
    rows.push_back(row);
  }
  log << ablation_table(rows);
  return rows;
}

}  // namespace paranoise
