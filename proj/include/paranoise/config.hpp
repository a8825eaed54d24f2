// Run configuration: "[section] key = value" text files with documented
// defaults, plus PARANOISE_SEED / PARANOISE_OUT environment overrides.
#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "paranoise/datapipe.hpp"
#include "paranoise/model.hpp"

namespace paranoise {

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<int> parse_int_list(const std::string& s, const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stoi(trim(tok)));
    } catch (const std::exception&) {
      throw std::invalid_argument("config: bad integer list for " + key + ": " + s);
    }
  }
  if (out.empty()) throw std::invalid_argument("config: empty list for " + key);
  return out;
}

}  // namespace detail

// Flat "section.key" -> raw value view of an INI-style stream. '#' and ';'
// start comments; later assignments win.
struct ConfigFile {
  std::map<std::string, std::string> values;

  static ConfigFile parse(std::istream& in, const std::string& origin = "<config>") {
    ConfigFile cf;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      size_t hash = line.find_first_of("#;");
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                      ": unterminated section header");
        section = detail::trim(line.substr(1, line.size() - 2));
        if (section.empty())
          throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                      ": empty section name");
        continue;
      }
      size_t eq = line.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                    ": expected key = value");
      std::string key = detail::trim(line.substr(0, eq));
      if (key.empty())
        throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": empty key");
      if (!section.empty()) key = section + "." + key;
      cf.values[key] = detail::trim(line.substr(eq + 1));
    }
    return cf;
  }

  bool take(const std::string& key, std::string* out) {
    auto it = values.find(key);
    if (it == values.end()) return false;
    *out = it->second;
    values.erase(it);
    return true;
  }
};

// Everything one training / evaluation run needs. Defaults are the desk-scale
// preset; any key may be overridden in the config file.
struct RunConfig {
  ModelConfig model;       // model.num_classes == 0 means "derive from manifest"
  BatchConfig batch;       // desk-scale default below: 8 speakers, 2 s crops
  float weight_decay = 1e-4f;
  float lr_peak = 0.01f;
  int warmup_epochs = 5;
  int epochs = 20;
  int steps_per_epoch = 50;
  double val_fraction = 0.05;  // speakers held out for best-checkpoint selection
  uint64_t seed = 1234;
  std::string train_manifest;
  std::string noise_manifest;
  std::string synth_dir;  // when set and manifests are absent, generate a corpus here
  std::string out_dir = "runs/default";

  RunConfig() { batch.batch_speakers = 8; }

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
    if (steps_per_epoch < 1)
      throw std::invalid_argument("config: steps_per_epoch must be >= 1");
    if (warmup_epochs < 1 || warmup_epochs > epochs)
      throw std::invalid_argument("config: need 1 <= warmup_epochs <= epochs");
    if (lr_peak <= 0.0f) throw std::invalid_argument("config: lr_peak must be > 0");
    if (weight_decay < 0.0f) throw std::invalid_argument("config: weight_decay must be >= 0");
    if (val_fraction < 0.0 || val_fraction >= 1.0)
      throw std::invalid_argument("config: need 0 <= val_fraction < 1");
    if (batch.batch_speakers < 2)
      throw std::invalid_argument("config: batch_speakers must be >= 2");
    if (batch.crop_seconds <= 0.0)
      throw std::invalid_argument("config: crop_seconds must be > 0");
    if (batch.snr_min_db > batch.snr_max_db)
      throw std::invalid_argument("config: snr_min_db > snr_max_db");
    if (train_manifest.empty() != noise_manifest.empty())
      throw std::invalid_argument("config: train_manifest and noise_manifest go together");
  }
};

// Parses a config stream. Unknown keys are hard errors so typos fail loudly.
inline RunConfig parse_run_config(std::istream& in, const std::string& origin = "<config>") {
  ConfigFile cf = ConfigFile::parse(in, origin);
  RunConfig rc;
  std::string v;

  auto take_int = [&](const std::string& key, int* out) {
    if (cf.take(key, &v)) *out = std::stoi(v);
  };
  auto take_double = [&](const std::string& key, double* out) {
    if (cf.take(key, &v)) *out = std::stod(v);
  };
  auto take_float = [&](const std::string& key, float* out) {
    if (cf.take(key, &v)) *out = std::stof(v);
  };
  auto take_bool = [&](const std::string& key, bool* out) {
    if (!cf.take(key, &v)) return;
    if (v == "true" || v == "1")
      *out = true;
    else if (v == "false" || v == "0")
      *out = false;
    else
      throw std::invalid_argument("config: bad boolean for " + key + ": " + v);
  };

  try {
    if (cf.take("model.variant", &v)) rc.model.variant = variant_from_name(v);
    take_float("model.width_mult", &rc.model.width_mult);
    if (cf.take("model.unet_blocks", &v))
      rc.model.unet_blocks = detail::parse_int_list(v, "model.unet_blocks");
    if (cf.take("model.sv_blocks", &v))
      rc.model.sv_blocks = detail::parse_int_list(v, "model.sv_blocks");
    take_int("model.embedding_dim", &rc.model.embedding_dim);
    take_int("model.num_classes", &rc.model.num_classes);
    take_float("model.aam_margin", &rc.model.aam_margin);
    take_float("model.aam_scale", &rc.model.aam_scale);

    cf.take("data.train_manifest", &rc.train_manifest);
    cf.take("data.noise_manifest", &rc.noise_manifest);
    cf.take("data.synth_dir", &rc.synth_dir);
    take_int("data.batch_speakers", &rc.batch.batch_speakers);
    take_double("data.crop_seconds", &rc.batch.crop_seconds);
    take_double("data.snr_min_db", &rc.batch.snr_min_db);
    take_double("data.snr_max_db", &rc.batch.snr_max_db);
    take_bool("data.speed_perturb", &rc.batch.use_speed_perturb);

    take_int("train.epochs", &rc.epochs);
    take_int("train.steps_per_epoch", &rc.steps_per_epoch);
    take_float("train.lr_peak", &rc.lr_peak);
    take_int("train.warmup_epochs", &rc.warmup_epochs);
    take_float("train.weight_decay", &rc.weight_decay);
    take_double("train.val_fraction", &rc.val_fraction);
    if (cf.take("train.seed", &v)) rc.seed = std::stoull(v);

    cf.take("paths.out_dir", &rc.out_dir);
  } catch (const std::invalid_argument&) {
    throw;
  } catch (const std::exception& e) {
    throw std::invalid_argument(origin + ": bad value: " + e.what());
  }

  if (!cf.values.empty())
    throw std::invalid_argument(origin + ": unknown key: " + cf.values.begin()->first);
  rc.model.seed = rc.seed;
  return rc;
}

// Applies PARANOISE_SEED / PARANOISE_OUT over a parsed config.
inline void apply_env_overrides(RunConfig* rc) {
  if (const char* s = std::getenv("PARANOISE_SEED")) {
    rc->seed = std::stoull(s);
    rc->model.seed = rc->seed;
  }
  if (const char* o = std::getenv("PARANOISE_OUT")) rc->out_dir = o;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config: " + path);
  RunConfig rc = parse_run_config(f, path);
  apply_env_overrides(&rc);
  return rc;
}

// Round-trips through parse_run_config; stored verbatim in checkpoints.
inline std::string serialize_run_config(const RunConfig& rc) {
  std::ostringstream os;
  os << "[model]\n"
     << "variant = " << variant_name(rc.model.variant) << "\n"
     << "width_mult = " << rc.model.width_mult << "\n"
     << "unet_blocks = ";
  for (size_t i = 0; i < rc.model.unet_blocks.size(); ++i)
    os << (i ? "," : "") << rc.model.unet_blocks[i];
  os << "\nsv_blocks = ";
  for (size_t i = 0; i < rc.model.sv_blocks.size(); ++i)
    os << (i ? "," : "") << rc.model.sv_blocks[i];
  os << "\nembedding_dim = " << rc.model.embedding_dim << "\n"
     << "num_classes = " << rc.model.num_classes << "\n"
     << "aam_margin = " << rc.model.aam_margin << "\n"
     << "aam_scale = " << rc.model.aam_scale << "\n\n"
     << "[data]\n"
     << "train_manifest = " << rc.train_manifest << "\n"
     << "noise_manifest = " << rc.noise_manifest << "\n"
     << "synth_dir = " << rc.synth_dir << "\n"
     << "batch_speakers = " << rc.batch.batch_speakers << "\n"
     << "crop_seconds = " << rc.batch.crop_seconds << "\n"
     << "snr_min_db = " << rc.batch.snr_min_db << "\n"
     << "snr_max_db = " << rc.batch.snr_max_db << "\n"
     << "speed_perturb = " << (rc.batch.use_speed_perturb ? "true" : "false") << "\n\n"
     << "[train]\n"
     << "epochs = " << rc.epochs << "\n"
     << "steps_per_epoch = " << rc.steps_per_epoch << "\n"
     << "lr_peak = " << rc.lr_peak << "\n"
     << "warmup_epochs = " << rc.warmup_epochs << "\n"
     << "weight_decay = " << rc.weight_decay << "\n"
     << "val_fraction = " << rc.val_fraction << "\n"
     << "seed = " << rc.seed << "\n\n"
     << "[paths]\n"
     << "out_dir = " << rc.out_dir << "\n";
  return os.str();
}

}  // namespace paranoise
