// Corpus manifests, SNR-controlled noise mixing, speed perturbation, paired
// clean/noisy batch construction, and a bundled synthetic corpus generator
// for desk-scale runs.
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <unordered_set>

#include "paranoise/audio.hpp"

namespace paranoise {

enum class NoiseCategory { kBabble, kMusic, kNoise, kNonspeech };

inline std::string category_name(NoiseCategory c) {
  switch (c) {
    case NoiseCategory::kBabble: return "babble";
    case NoiseCategory::kMusic: return "music";
    case NoiseCategory::kNoise: return "noise";
    case NoiseCategory::kNonspeech: return "nonspeech";
  }
  throw std::logic_error("bad noise category");
}

inline NoiseCategory category_from_name(const std::string& s) {
  if (s == "babble") return NoiseCategory::kBabble;
  if (s == "music") return NoiseCategory::kMusic;
  if (s == "noise") return NoiseCategory::kNoise;
  if (s == "nonspeech") return NoiseCategory::kNonspeech;
  throw std::invalid_argument("unknown noise category: " + s);
}

// --- manifests ---------------------------------------------------------------

struct ManifestRecord {
  std::string utterance_id;
  std::string speaker_id;  // noise manifests reuse this field for the category
  std::string audio_path;
  double duration_s = 0.0;
};

// Line format: utterance_id<TAB>speaker_id<TAB>path<TAB>duration
inline std::vector<ManifestRecord> parse_manifest(std::istream& in,
                                                  const std::string& origin = "<stream>") {
  std::vector<ManifestRecord> out;
  std::unordered_set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestRecord r;
    std::string dur;
    if (!std::getline(ls, r.utterance_id, '\t') || !std::getline(ls, r.speaker_id, '\t') ||
        !std::getline(ls, r.audio_path, '\t') || !std::getline(ls, dur))
      throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                               ": malformed manifest line");
    try {
      r.duration_s = std::stod(dur);
    } catch (const std::exception&) {
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": bad duration '" +
                               dur + "'");
    }
    if (!seen.insert(r.utterance_id).second)
      throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                               ": duplicate utterance_id " + r.utterance_id);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<ManifestRecord> load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open manifest: " + path);
  return parse_manifest(f, path);
}

inline void write_manifest(const std::string& path, const std::vector<ManifestRecord>& recs) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write manifest: " + path);
  f.setf(std::ios::fixed);
  f.precision(4);
  for (const auto& r : recs)
    f << r.utterance_id << '\t' << r.speaker_id << '\t' << r.audio_path << '\t'
      << r.duration_s << '\n';
}

// Stable speaker_id -> class index mapping (sorted order).
struct SpeakerIndex {
  std::map<std::string, int> labels;

  explicit SpeakerIndex(const std::vector<ManifestRecord>& recs = {}) {
    for (const auto& r : recs) labels.emplace(r.speaker_id, 0);
    int i = 0;
    for (auto& [id, lab] : labels) lab = i++;
  }
  int label(const std::string& speaker_id) const {
    auto it = labels.find(speaker_id);
    if (it == labels.end()) throw std::invalid_argument("unknown speaker: " + speaker_id);
    return it->second;
  }
  int num_speakers() const { return static_cast<int>(labels.size()); }
};

// --- mixing ------------------------------------------------------------------

struct MixSpec {
  NoiseCategory category = NoiseCategory::kNoise;
  double snr_db = 0.0;
  std::string noise_utterance_id;
  int64_t offset_samples = 0;
};

inline double mean_power(const Waveform& w) {
  double s = 0;
  for (double v : w.samples) s += v * v;
  return w.samples.empty() ? 0.0 : s / w.samples.size();
}

struct MixResult {
  Waveform mixed;
  Waveform scaled_noise;
};

// mixed = speech + g*noise with g = sqrt(P_speech / (P_noise * 10^(snr/10))).
inline MixResult mix_at_snr(const Waveform& speech, const Waveform& noise, double snr_db) {
  if (noise.samples.size() != speech.samples.size())
    throw std::invalid_argument("mix_at_snr: noise must match speech length (" +
                                std::to_string(noise.samples.size()) + " vs " +
                                std::to_string(speech.samples.size()) + ")");
  double ps = mean_power(speech), pn = mean_power(noise);
  if (ps <= 0.0) throw std::invalid_argument("mix_at_snr: zero-power speech");
  if (pn <= 0.0) throw std::invalid_argument("mix_at_snr: zero-power noise");
  double g = std::sqrt(ps / (pn * std::pow(10.0, snr_db / 10.0)));

  MixResult r;
  r.scaled_noise = noise;
  for (double& v : r.scaled_noise.samples) v *= g;
  r.mixed = speech;
  for (size_t i = 0; i < speech.samples.size(); ++i)
    r.mixed.samples[i] += r.scaled_noise.samples[i];
  r.mixed.source_id = speech.source_id + "+noise";
  return r;
}

// Cuts (or wrap-loops) noise to the requested length starting at offset.
inline Waveform fit_noise(const Waveform& noise, size_t length, int64_t offset) {
  if (noise.samples.empty()) throw std::invalid_argument("fit_noise: empty noise");
  Waveform out;
  out.sample_rate_hz = noise.sample_rate_hz;
  out.source_id = noise.source_id;
  out.samples.resize(length);
  size_t n = noise.samples.size();
  for (size_t i = 0; i < length; ++i)
    out.samples[i] = noise.samples[(static_cast<size_t>(offset) + i) % n];
  return out;
}

// --- speed perturbation ------------------------------------------------------

// Resample-based tempo/pitch change; output length = round(len / factor).
inline Waveform speed_perturb(const Waveform& w, double factor) {
  if (factor != 0.9 && factor != 1.0 && factor != 1.1)
    throw std::invalid_argument("speed_perturb: factor must be one of {0.9, 1.0, 1.1}");
  if (factor == 1.0) return w;
  size_t out_len = static_cast<size_t>(std::llround(w.samples.size() / factor));
  Waveform out;
  out.sample_rate_hz = w.sample_rate_hz;
  out.source_id = w.source_id;
  out.samples.resize(out_len);
  for (size_t i = 0; i < out_len; ++i) {
    double pos = i * factor;
    size_t i0 = static_cast<size_t>(pos);
    double frac = pos - i0;
    size_t i1 = std::min(i0 + 1, w.samples.size() - 1);
    i0 = std::min(i0, w.samples.size() - 1);
    out.samples[i] = (1.0 - frac) * w.samples[i0] + frac * w.samples[i1];
  }
  return out;
}

// --- batch construction ------------------------------------------------------

struct BatchConfig {
  int batch_speakers = 4;
  double crop_seconds = 2.0;
  double snr_min_db = 0.0;
  double snr_max_db = 20.0;
  bool use_speed_perturb = true;
};

struct BatchItem {
  Waveform clean;
  Waveform noisy;
  Waveform scaled_noise;  // L_n target, aligned with noisy
  int label = -1;
  std::string utterance_id;
  MixSpec spec;
};

struct TrainingBatch {
  std::vector<BatchItem> items;
};

using AudioLoader = std::function<Waveform(const std::string&)>;

// Samples B distinct speakers; per speaker one fixed-length crop, its fresh
// noise mix and the aligned scaled noise. Deterministic for a given rng state.
inline TrainingBatch build_batch(const std::vector<ManifestRecord>& train,
                                 const std::vector<ManifestRecord>& noise,
                                 const SpeakerIndex& speakers, const BatchConfig& cfg,
                                 std::mt19937& rng, const AudioLoader& load = read_wav) {
  if (noise.empty()) throw std::invalid_argument("build_batch: empty noise manifest");
  std::map<std::string, std::vector<const ManifestRecord*>> by_speaker;
  for (const auto& r : train) by_speaker[r.speaker_id].push_back(&r);
  if (static_cast<int>(by_speaker.size()) < cfg.batch_speakers)
    throw std::invalid_argument("build_batch: need " + std::to_string(cfg.batch_speakers) +
                                " distinct speakers, manifest has " +
                                std::to_string(by_speaker.size()));

  std::vector<std::string> ids;
  for (auto& [id, recs] : by_speaker) ids.push_back(id);
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(cfg.batch_speakers);

  const int sr = 16000;
  size_t crop = static_cast<size_t>(std::llround(cfg.crop_seconds * sr));
  const double factors[3] = {0.9, 1.0, 1.1};

  TrainingBatch batch;
  for (const auto& spk : ids) {
    double factor =
        cfg.use_speed_perturb ? factors[std::uniform_int_distribution<int>(0, 2)(rng)] : 1.0;
    // source samples needed so the perturbed crop still covers `crop`
    size_t need = static_cast<size_t>(std::ceil(crop * factor)) + 2;

    std::vector<const ManifestRecord*> usable;
    for (const auto* r : by_speaker[spk])
      if (r->duration_s * sr >= static_cast<double>(need)) usable.push_back(r);
    if (usable.empty())
      throw std::invalid_argument("build_batch: speaker " + spk +
                                  " has no utterance covering the crop length");
    const ManifestRecord* rec =
        usable[std::uniform_int_distribution<size_t>(0, usable.size() - 1)(rng)];

    Waveform full = load(rec->audio_path);
    if (full.samples.size() < need)
      throw std::runtime_error("build_batch: " + rec->audio_path + " shorter than manifest");
    size_t start =
        std::uniform_int_distribution<size_t>(0, full.samples.size() - need)(rng);

    Waveform seg;
    seg.sample_rate_hz = sr;
    seg.source_id = rec->utterance_id;
    seg.samples.assign(full.samples.begin() + start, full.samples.begin() + start + need);
    seg = speed_perturb(seg, factor);
    seg.samples.resize(crop);

    const ManifestRecord* nrec =
        &noise[std::uniform_int_distribution<size_t>(0, noise.size() - 1)(rng)];
    Waveform noise_full = load(nrec->audio_path);
    int64_t off = std::uniform_int_distribution<int64_t>(
        0, static_cast<int64_t>(noise_full.samples.size()) - 1)(rng);
    Waveform noise_seg = fit_noise(noise_full, crop, off);

    MixSpec spec;
    spec.category = category_from_name(nrec->speaker_id);
    spec.snr_db = std::uniform_real_distribution<double>(cfg.snr_min_db, cfg.snr_max_db)(rng);
    spec.noise_utterance_id = nrec->utterance_id;
    spec.offset_samples = off;

    MixResult mix = mix_at_snr(seg, noise_seg, spec.snr_db);

    BatchItem item;
    item.noisy = mix.mixed;
    item.scaled_noise = mix.scaled_noise;
    // re-derive clean as mixed - scaled_noise so the additive pairing is exact
    // in floating point (noisy[i] - g*noise == clean[i] bitwise)
    item.clean = seg;
    for (size_t i = 0; i < crop; ++i)
      item.clean.samples[i] = mix.mixed.samples[i] - mix.scaled_noise.samples[i];
    item.label = speakers.label(spk);
    item.utterance_id = rec->utterance_id;
    item.spec = spec;
    batch.items.push_back(std::move(item));
  }
  return batch;
}

// --- synthetic corpus --------------------------------------------------------

struct SynthConfig {
  int num_speakers = 8;
  int utts_per_speaker = 10;
  double utt_seconds = 3.0;
  int noise_files_per_category = 4;
  double noise_seconds = 5.0;
  uint64_t seed = 1234;
};

struct SynthPaths {
  std::string train_manifest;
  std::string noise_manifest;
};

namespace detail {

inline void peak_normalize(std::vector<double>& s, double peak = 0.5) {
  double mx = 1e-9;
  for (double v : s) mx = std::max(mx, std::abs(v));
  for (double& v : s) v = v / mx * peak;
}

// A voiced utterance with a per-speaker harmonic signature.
inline Waveform synth_voice(double f0, const std::vector<double>& harm_amps, double seconds,
                            std::mt19937& rng) {
  const int sr = 16000;
  size_t n = static_cast<size_t>(seconds * sr);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double vib_rate = 4.0 + 3.0 * u(rng);
  double vib_depth = 0.01 + 0.02 * u(rng);
  double env_rate = 1.5 + 2.0 * u(rng);
  double phase0 = 2 * M_PI * u(rng);
  std::normal_distribution<double> g(0.0, 0.01);

  Waveform w;
  w.samples.resize(n);
  double phase = phase0;
  for (size_t i = 0; i < n; ++i) {
    double t = static_cast<double>(i) / sr;
    double f = f0 * (1.0 + vib_depth * std::sin(2 * M_PI * vib_rate * t));
    phase += 2 * M_PI * f / sr;
    double env = 0.6 + 0.4 * std::sin(2 * M_PI * env_rate * t + phase0);
    double v = 0;
    for (size_t h = 0; h < harm_amps.size(); ++h)
      v += harm_amps[h] * std::sin(phase * static_cast<double>(h + 1));
    w.samples[i] = env * v + g(rng);
  }
  detail::peak_normalize(w.samples);
  return w;
}

inline Waveform synth_noise(NoiseCategory cat, double seconds, std::mt19937& rng) {
  const int sr = 16000;
  size_t n = static_cast<size_t>(seconds * sr);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  Waveform w;
  w.samples.assign(n, 0.0);

  switch (cat) {
    case NoiseCategory::kBabble:
      // several overlapping voice-like tones with wandering pitch
      for (int v = 0; v < 6; ++v) {
        double f0 = 90 + 160 * u(rng);
        double mod = 0.3 + 2.0 * u(rng);
        double ph = 2 * M_PI * u(rng);
        for (size_t i = 0; i < n; ++i) {
          double t = static_cast<double>(i) / sr;
          double f = f0 * (1.0 + 0.05 * std::sin(2 * M_PI * mod * t + ph));
          w.samples[i] += std::sin(2 * M_PI * f * t + ph) *
                          (0.5 + 0.5 * std::sin(2 * M_PI * (mod * 0.7) * t));
        }
      }
      break;
    case NoiseCategory::kMusic: {
      // sustained chords changing every half second
      double chord[3];
      for (size_t i = 0; i < n; ++i) {
        if (i % (sr / 2) == 0) {
          double root = 110.0 * std::pow(2.0, std::floor(12 * u(rng)) / 12.0);
          chord[0] = root;
          chord[1] = root * 5.0 / 4.0;
          chord[2] = root * 3.0 / 2.0;
        }
        double t = static_cast<double>(i) / sr;
        for (double f : chord) w.samples[i] += std::sin(2 * M_PI * f * t) / 3.0;
      }
      break;
    }
    case NoiseCategory::kNoise: {
      // one-pole lowpassed white noise
      double a = 0.05 + 0.9 * u(rng), prev = 0;
      for (size_t i = 0; i < n; ++i) {
        prev = a * prev + (1.0 - a) * g(rng);
        w.samples[i] = prev;
      }
      break;
    }
    case NoiseCategory::kNonspeech: {
      // sparse clicks and short decaying bursts
      size_t i = 0;
      while (i < n) {
        i += static_cast<size_t>((0.05 + 0.3 * u(rng)) * sr);
        double amp = 0.3 + 0.7 * u(rng);
        double decay = 200 + 2000 * u(rng);
        for (size_t k = 0; i + k < n && k < static_cast<size_t>(0.05 * sr); ++k)
          w.samples[i + k] += amp * g(rng) * std::exp(-decay * k / sr);
      }
      break;
    }
  }
  detail::peak_normalize(w.samples);
  return w;
}

}  // namespace detail

// Writes a small speech + noise corpus under dir and returns manifest paths.
inline SynthPaths generate_synthetic_corpus(const std::string& dir, const SynthConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "speech");
  fs::create_directories(fs::path(dir) / "noise");
  std::mt19937 rng(static_cast<unsigned>(cfg.seed));
  std::uniform_real_distribution<double> u(0.0, 1.0);

  std::vector<ManifestRecord> train;
  for (int s = 0; s < cfg.num_speakers; ++s) {
    double f0 = 95.0 + 21.0 * s + 6.0 * u(rng);
    std::vector<double> harm(8);
    for (auto& h : harm) h = 0.1 + u(rng);
    for (int k = 0; k < cfg.utts_per_speaker; ++k) {
      double secs = cfg.utt_seconds * (0.85 + 0.4 * u(rng));
      Waveform w = detail::synth_voice(f0, harm, secs, rng);
      ManifestRecord r;
      r.utterance_id = "spk" + std::to_string(s) + "_utt" + std::to_string(k);
      r.speaker_id = "spk" + std::to_string(s);
      r.audio_path = (fs::path(dir) / "speech" / (r.utterance_id + ".wav")).string();
      r.duration_s = w.duration_s();
      write_wav(r.audio_path, w);
      train.push_back(std::move(r));
    }
  }

  std::vector<ManifestRecord> noise;
  for (NoiseCategory cat : {NoiseCategory::kBabble, NoiseCategory::kMusic,
                            NoiseCategory::kNoise, NoiseCategory::kNonspeech}) {
    for (int k = 0; k < cfg.noise_files_per_category; ++k) {
      Waveform w = detail::synth_noise(cat, cfg.noise_seconds, rng);
      ManifestRecord r;
      r.utterance_id = category_name(cat) + "_" + std::to_string(k);
      r.speaker_id = category_name(cat);
      r.audio_path = (fs::path(dir) / "noise" / (r.utterance_id + ".wav")).string();
      r.duration_s = w.duration_s();
      write_wav(r.audio_path, w);
      noise.push_back(std::move(r));
    }
  }

  SynthPaths paths;
  paths.train_manifest = (fs::path(dir) / "train.tsv").string();
  paths.noise_manifest = (fs::path(dir) / "noise.tsv").string();
  write_manifest(paths.train_manifest, train);
  write_manifest(paths.noise_manifest, noise);
  return paths;
}

}  // namespace paranoise
