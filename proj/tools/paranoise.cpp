// Command-line front end: train / eval / ablation / params / mix / synth.
#include <iostream>

#include "CLI11.hpp"
#include "paranoise/trainer.hpp"

using namespace paranoise;

namespace {

// "clean,babble,music,noise" x the requested SNRs; "all" = the standard grid.
std::vector<EvalCondition> parse_conditions(const std::vector<std::string>& names,
                                            const std::vector<double>& snrs) {
  if (names.empty() || (names.size() == 1 && names[0] == "all"))
    return standard_conditions();
  std::vector<double> grid = snrs.empty() ? std::vector<double>{0, 5, 10, 15, 20} : snrs;
  std::vector<EvalCondition> out;
  for (const std::string& n : names) {
    if (n == "clean") {
      out.push_back({true, NoiseCategory::kNoise, 0.0});
      continue;
    }
    NoiseCategory cat = category_from_name(n);
    for (double snr : grid) out.push_back({false, cat, snr});
  }
  if (out.empty()) throw std::invalid_argument("no evaluation conditions selected");
  return out;
}

int cmd_train(const std::string& config_path, const std::string& resume) {
  RunConfig cfg = load_run_config(config_path);
  Trainer trainer(cfg);
  std::cout << "training " << variant_name(trainer.config().model.variant) << " on "
            << trainer.train_records().size() << " utterances / "
            << trainer.config().model.num_classes << " speakers; checkpoints in "
            << trainer.config().out_dir << "\n";
  TrainResult res = trainer.run(std::cout, resume);
  std::cout << "done: " << res.steps.size() << " steps";
  if (res.best_epoch >= 0)
    std::cout << "; best val EER " << res.best_val_eer << "% at epoch " << res.best_epoch;
  std::cout << "\nbest checkpoint: " << res.best_checkpoint << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& trials_path,
             const std::vector<std::string>& cond_names, const std::vector<double>& snrs,
             std::string noise_manifest, const std::string& report_path, uint64_t seed) {
  CheckpointMeta meta = read_checkpoint_meta(ckpt_path);
  std::istringstream cfg_in(meta.config_text);
  RunConfig cfg = parse_run_config(cfg_in);
  ParaNoiseModel model(cfg.model);
  load_checkpoint(ckpt_path, model);

  if (noise_manifest.empty()) noise_manifest = cfg.noise_manifest;
  std::vector<EvalCondition> conditions = parse_conditions(cond_names, snrs);
  bool needs_noise = false;
  for (const auto& c : conditions) needs_noise |= !c.clean;
  std::vector<ManifestRecord> noise;
  if (needs_noise) {
    if (noise_manifest.empty())
      throw std::invalid_argument("noisy conditions need --noise (or a checkpoint "
                                  "whose config records one)");
    noise = load_manifest(noise_manifest);
  }

  std::vector<Trial> trials = load_trials(trials_path);
  ConditionReport rep =
      run_trials(make_embedder(model), trials, noise, conditions, seed);
  std::cout << rep.human_readable();
  if (!report_path.empty()) {
    std::ofstream f(report_path);
    if (!f) throw std::runtime_error("cannot write report: " + report_path);
    f << rep.machine_readable();
    std::cout << "report written to " << report_path << "\n";
  }
  return 0;
}

int cmd_ablation(const std::string& config_path, const std::vector<std::string>& cond_names,
                 const std::vector<double>& snrs) {
  RunConfig cfg = load_run_config(config_path);
  std::vector<EvalCondition> conditions =
      cond_names.empty() ? std::vector<EvalCondition>{{true, NoiseCategory::kNoise, 0.0}}
                         : parse_conditions(cond_names, snrs);
  run_ablation(cfg, std::cout, conditions);
  return 0;
}

int cmd_params(const std::string& config_path, int classes) {
  RunConfig cfg = load_run_config(config_path);
  if (cfg.model.num_classes == 0) {
    if (!cfg.train_manifest.empty())
      cfg.model.num_classes = SpeakerIndex(load_manifest(cfg.train_manifest)).num_speakers();
    else
      cfg.model.num_classes = classes;
  }
  cfg.model.seed = cfg.seed;
  ParaNoiseModel model(cfg.model);
  std::cout << model.param_count() << "\n";
  return 0;
}

int cmd_mix(const std::string& in_path, const std::string& noise_path, double snr,
            const std::string& out_path) {
  Waveform speech = read_wav(in_path);
  Waveform noise = fit_noise(read_wav(noise_path), speech.samples.size(), 0);
  write_wav(out_path, mix_at_snr(speech, noise, snr).mixed);
  return 0;
}

int cmd_synth(const std::string& out_dir, const SynthConfig& sc) {
  SynthPaths p = generate_synthetic_corpus(out_dir, sc);
  std::cout << "train manifest: " << p.train_manifest << "\n"
            << "noise manifest: " << p.noise_manifest << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"speech-enhancement-aware speaker verification toolkit"};
  app.require_subcommand(1);

  std::string config_path, resume, ckpt_path, trials_path, report_path;
  std::string in_path, noise_path, out_path, out_dir;
  std::vector<std::string> cond_names;
  std::vector<double> snrs;
  uint64_t eval_seed = 0;
  double snr = 10.0;
  int classes = 1211;
  SynthConfig sc;

  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", config_path, "run config path")->required();
  train->add_option("--resume", resume, "checkpoint to resume from");

  auto* eval = app.add_subcommand("eval", "score a trial list under noise conditions");
  eval->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  eval->add_option("--trials", trials_path, "trial list: <0|1> <enroll> <test>")->required();
  eval->add_option("--conditions", cond_names,
                   "clean|babble|music|noise|all (default: all)")->delimiter(',');
  eval->add_option("--snr", snrs, "SNRs in dB for noisy conditions")->delimiter(',');
  eval->add_option("--noise", noise_path, "noise manifest (default: from checkpoint)");
  eval->add_option("--out", report_path, "write a machine-readable report here");
  eval->add_option("--seed", eval_seed, "noise-draw seed");

  auto* ablation = app.add_subcommand("ablation", "train and compare all four variants");
  ablation->add_option("--config", config_path, "run config path")->required();
  ablation->add_option("--conditions", cond_names, "evaluation conditions")->delimiter(',');
  ablation->add_option("--snr", snrs, "SNRs in dB for noisy conditions")->delimiter(',');

  auto* params = app.add_subcommand("params", "print the trainable parameter count");
  params->add_option("--config", config_path, "run config path")->required();
  params->add_option("--classes", classes, "speaker count when no manifest is given");

  auto* mix = app.add_subcommand("mix", "mix a noise file into a speech file at an SNR");
  mix->add_option("--in", in_path, "speech wav")->required();
  mix->add_option("--noise", noise_path, "noise wav")->required();
  mix->add_option("--snr", snr, "target SNR in dB")->required();
  mix->add_option("--out", out_path, "output wav")->required();

  auto* synth = app.add_subcommand("synth", "generate the synthetic corpus");
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--speakers", sc.num_speakers, "speaker count");
  synth->add_option("--utts", sc.utts_per_speaker, "utterances per speaker");
  synth->add_option("--seed", sc.seed, "corpus seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(config_path, resume);
    if (*eval) return cmd_eval(ckpt_path, trials_path, cond_names, snrs, noise_path,
                               report_path, eval_seed);
    if (*ablation) return cmd_ablation(config_path, cond_names, snrs);
    if (*params) return cmd_params(config_path, classes);
    if (*mix) return cmd_mix(in_path, noise_path, snr, out_path);
    if (*synth) return cmd_synth(out_dir, sc);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
