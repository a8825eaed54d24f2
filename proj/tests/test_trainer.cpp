#include <gtest/gtest.h>

#include <filesystem>
#include <unistd.h>
#include <sstream>

#include "paranoise/trainer.hpp"

using namespace paranoise;
namespace fs = std::filesystem;

namespace {

// One tiny on-disk corpus shared by all trainer tests.
struct Corpus {
  fs::path dir;
  SynthPaths paths;
  Corpus() {
    dir = fs::temp_directory_path() / ("pnsv_trainer_test_" + std::to_string(::getpid()));
    SynthConfig sc;
    sc.num_speakers = 8;
    sc.utts_per_speaker = 3;
    sc.utt_seconds = 2.0;
    sc.noise_files_per_category = 2;
    sc.noise_seconds = 3.0;
    sc.seed = 77;
    paths = generate_synthetic_corpus(dir.string(), sc);
  }
  ~Corpus() { fs::remove_all(dir); }
};

const Corpus& corpus() {
  static Corpus c;
  return c;
}

RunConfig smoke_run(const std::string& out_name) {
  RunConfig rc;
  rc.model.variant = Variant::kEncOnly;
  rc.model.width_mult = 0.5f;
  rc.model.unet_blocks = {1, 1, 1, 1};
  rc.model.sv_blocks = {1, 1, 1, 1};
  rc.batch.batch_speakers = 4;
  rc.batch.crop_seconds = 1.0;
  rc.epochs = 1;
  rc.warmup_epochs = 1;
  rc.steps_per_epoch = 2;
  rc.seed = 42;
  rc.train_manifest = corpus().paths.train_manifest;
  rc.noise_manifest = corpus().paths.noise_manifest;
  rc.out_dir = (fs::temp_directory_path() / ("pnsv_run_" + out_name)).string();
  return rc;
}

}  // namespace

TEST(Schedule, WarmupPeaksThenCosineDecaysToZero) {
  RunConfig rc;
  rc.lr_peak = 0.01f;
  rc.warmup_epochs = 5;
  rc.epochs = 20;
  rc.steps_per_epoch = 100;
  // linear ramp: monotone and exact at the warmup boundary
  float prev = 0.0f;
  for (int64_t s = 0; s < 5 * 100; ++s) {
    float lr = learning_rate_at(rc, s);
    EXPECT_GT(lr, prev);
    prev = lr;
  }
  EXPECT_FLOAT_EQ(learning_rate_at(rc, 5 * 100 - 1), 0.01f);
  // halfway through annealing: cos midpoint = half the peak
  EXPECT_NEAR(learning_rate_at(rc, (5 + 15 / 2.0) * 100 - 1), 0.005f, 1e-6f);
  // final step lands on the annealing floor
  EXPECT_NEAR(learning_rate_at(rc, 20 * 100 - 1), 0.0f, 1e-9f);
  // monotone decay after the peak
  prev = 0.011f;
  for (int64_t s = 5 * 100; s < 20 * 100; s += 50) {
    float lr = learning_rate_at(rc, s);
    EXPECT_LT(lr, prev);
    prev = lr;
  }
}

TEST(StackFeatures, BatchesAndRejectsRagged) {
  LogMelSpectrogram a, b;
  a.values = Tensor({3, 4}, 1.0f);
  b.values = Tensor({3, 4}, 2.0f);
  Tensor t = stack_features({a, b});
  EXPECT_EQ(t.shape, (std::vector<int>{2, 1, 3, 4}));
  EXPECT_FLOAT_EQ(t.at({0, 0, 1, 2}), 1.0f);
  EXPECT_FLOAT_EQ(t.at({1, 0, 2, 3}), 2.0f);
  b.values = Tensor({3, 5});
  EXPECT_THROW(stack_features({a, b}), std::invalid_argument);
  EXPECT_THROW(stack_features({}), std::invalid_argument);
}

TEST(MakeTrials, CappedDeterministicAndBalanced) {
  std::vector<ManifestRecord> recs;
  for (int s = 0; s < 4; ++s)
    for (int u = 0; u < 5; ++u)
      recs.push_back({"s" + std::to_string(s) + "u" + std::to_string(u),
                      "s" + std::to_string(s), "path", 1.0});
  auto t1 = make_trials(recs, 50, 3);
  auto t2 = make_trials(recs, 50, 3);
  ASSERT_EQ(t1.size(), 50u);
  for (size_t i = 0; i < t1.size(); ++i) {
    EXPECT_EQ(t1[i].enroll_path, t2[i].enroll_path);
    EXPECT_EQ(t1[i].label, t2[i].label);
  }
  int targets = 0;
  for (const auto& t : t1) targets += t.label ? 1 : 0;
  EXPECT_GT(targets, 0);
  EXPECT_LT(targets, 50);
}

TEST(BatchLosses, ReconstructionTermTracksTheWiring) {
  RunConfig rc = smoke_run("wiring");
  Trainer tr(rc);
  std::mt19937 rng(1);
  TrainingBatch batch = build_batch(tr.train_records(), tr.noise_records(),
                                    SpeakerIndex(tr.train_records()), rc.batch, rng);

  ModelConfig mc = tr.config().model;
  ParaNoiseModel enc_only(mc);
  std::mt19937 aug1(5);
  LossBundle b1 = batch_losses(enc_only, batch, FrontendConfig{}, true, aug1);
  EXPECT_GT(b1.l_n->value.data[0], 0.0f);
  EXPECT_GT(b1.l_s->value.data[0], 0.0f);

  mc.variant = Variant::kBaselineNoNe;
  ParaNoiseModel baseline(mc);
  std::mt19937 aug2(5);
  LossBundle b0 = batch_losses(baseline, batch, FrontendConfig{}, true, aug2);
  EXPECT_FLOAT_EQ(b0.l_n->value.data[0], 0.0f);
  EXPECT_FLOAT_EQ(b0.total->value.data[0], b0.l_s->value.data[0] +
                                               b0.l_c->value.data[0] +
                                               b0.l_ap->value.data[0] +
                                               b0.l_aam->value.data[0]);
}

TEST(Trainer, RunWritesCheckpointsAndValScores) {
  RunConfig rc = smoke_run("run");
  std::ostringstream log;
  Trainer tr(rc);
  // 5% of 8 speakers rounds to zero; the fallback holds out two so the best
  // checkpoint can still be picked by validation EER
  EXPECT_EQ(SpeakerIndex(tr.train_records()).num_speakers(), 6);
  EXPECT_EQ(tr.config().model.num_classes, 6);

  TrainResult res = tr.run(log);
  EXPECT_EQ(res.steps.size(), 2u);
  for (const auto& s : res.steps) EXPECT_TRUE(std::isfinite(s.total));
  EXPECT_EQ(res.val_eers.size(), 1u);
  EXPECT_TRUE(fs::exists(fs::path(rc.out_dir) / "epoch_001.pnsv"));
  EXPECT_TRUE(fs::exists(res.best_checkpoint));
  EXPECT_NE(log.str().find("step\tl_n\tl_s"), std::string::npos);

  // the best checkpoint reloads into a fresh model of the recorded config
  CheckpointMeta meta = read_checkpoint_meta(res.best_checkpoint);
  std::istringstream cfg_in(meta.config_text);
  RunConfig replay = parse_run_config(cfg_in);
  ParaNoiseModel model(replay.model);
  EXPECT_NO_THROW(load_checkpoint(res.best_checkpoint, model));
  fs::remove_all(rc.out_dir);
}

TEST(Trainer, SameSeedGivesIdenticalLossTraces) {
  RunConfig rc = smoke_run("det_a");
  std::ostringstream log_a, log_b;
  TrainResult a = Trainer(rc).run(log_a);
  rc.out_dir = (fs::temp_directory_path() / "pnsv_run_det_b").string();
  TrainResult b = Trainer(rc).run(log_b);
  ASSERT_EQ(a.steps.size(), b.steps.size());
  for (size_t i = 0; i < a.steps.size(); ++i)
    EXPECT_NEAR(a.steps[i].total, b.steps[i].total, 1e-6);
  ASSERT_EQ(a.val_eers.size(), b.val_eers.size());
  for (size_t i = 0; i < a.val_eers.size(); ++i)
    EXPECT_DOUBLE_EQ(a.val_eers[i], b.val_eers[i]);
  fs::remove_all((fs::temp_directory_path() / "pnsv_run_det_a"));
  fs::remove_all((fs::temp_directory_path() / "pnsv_run_det_b"));
}

TEST(Trainer, ResumeContinuesFromTheSavedEpoch) {
  RunConfig rc = smoke_run("resume");
  std::ostringstream log;
  TrainResult first = Trainer(rc).run(log);

  RunConfig longer = rc;
  longer.epochs = 2;
  TrainResult second = Trainer(longer).run(log, first.last_checkpoint);
  // resumed run only executes the second epoch
  EXPECT_EQ(second.steps.size(), 2u);
  EXPECT_TRUE(fs::exists(fs::path(rc.out_dir) / "epoch_002.pnsv"));

  // resuming into a different topology is a hard error
  RunConfig other = longer;
  other.model.variant = Variant::kBaselineNoNe;
  Trainer bad(other);
  EXPECT_THROW(bad.run(log, first.last_checkpoint), std::runtime_error);
  fs::remove_all(rc.out_dir);
}

TEST(Trainer, RequiresACorpus) {
  RunConfig rc;
  EXPECT_THROW(Trainer{rc}, std::invalid_argument);
}
