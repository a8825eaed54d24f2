// Log-mel frontend, instance normalization and SpecAugment masking.
#pragma once

#include <unsupported/Eigen/FFT>

#include "paranoise/audio.hpp"
#include "paranoise/tensor.hpp"

namespace paranoise {

struct FrontendConfig {
  int n_mels = 64;
  int window_ms = 25;
  int hop_ms = 10;
  int sample_rate_hz = 16000;
  int fft_size = 512;
  float log_floor = 1e-6f;

  int window_samples() const { return sample_rate_hz * window_ms / 1000; }
  int hop_samples() const { return sample_rate_hz * hop_ms / 1000; }

  void validate() const {
    if (n_mels != 64) throw std::invalid_argument("frontend: n_mels must be 64");
    if (window_ms <= hop_ms) throw std::invalid_argument("frontend: window must exceed hop");
    if (log_floor <= 0.0f) throw std::invalid_argument("frontend: log_floor must be > 0");
    if (fft_size < window_samples())
      throw std::invalid_argument("frontend: fft_size below window length");
  }
};

// values: [n_mels x T]
struct LogMelSpectrogram {
  Tensor values;
  int num_frames() const { return values.dim(1); }
  int num_mels() const { return values.dim(0); }
};

inline int frame_count(size_t samples, const FrontendConfig& cfg) {
  int win = cfg.window_samples(), hop = cfg.hop_samples();
  if (static_cast<int>(samples) < win) return 0;
  return static_cast<int>((samples - win) / hop) + 1;
}

namespace detail {

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular mel filterbank over fft bins [0, nfft/2].
inline std::vector<std::vector<float>> mel_filterbank(const FrontendConfig& cfg) {
  int bins = cfg.fft_size / 2 + 1;
  double fmax = cfg.sample_rate_hz / 2.0;
  double mel_lo = hz_to_mel(0.0), mel_hi = hz_to_mel(fmax);
  std::vector<double> centers(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    centers[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (cfg.n_mels + 1));

  std::vector<std::vector<float>> fb(cfg.n_mels, std::vector<float>(bins, 0.0f));
  for (int m = 0; m < cfg.n_mels; ++m) {
    double f0 = centers[m], f1 = centers[m + 1], f2 = centers[m + 2];
    for (int k = 0; k < bins; ++k) {
      double fk = static_cast<double>(k) * cfg.sample_rate_hz / cfg.fft_size;
      double w = 0.0;
      if (fk > f0 && fk <= f1)
        w = (fk - f0) / (f1 - f0);
      else if (fk > f1 && fk < f2)
        w = (f2 - fk) / (f2 - f1);
      fb[m][k] = static_cast<float>(w);
    }
  }
  return fb;
}

}  // namespace detail

inline LogMelSpectrogram compute_log_mel(const Waveform& w, const FrontendConfig& cfg) {
  cfg.validate();
  int win = cfg.window_samples(), hop = cfg.hop_samples();
  int T = frame_count(w.samples.size(), cfg);
  if (T < 1)
    throw std::invalid_argument("waveform too short: " + std::to_string(w.samples.size()) +
                                " samples < one window (" + std::to_string(win) + ")");
  for (double s : w.samples)
    if (!std::isfinite(s)) throw std::invalid_argument("waveform has non-finite samples");

  static thread_local std::vector<std::vector<float>> fb;
  static thread_local int fb_key = -1;
  int key = cfg.fft_size * 1000 + cfg.n_mels;
  if (fb_key != key) {
    fb = detail::mel_filterbank(cfg);
    fb_key = key;
  }

  std::vector<float> hann(win);
  for (int i = 0; i < win; ++i)
    hann[i] = 0.5f - 0.5f * std::cos(2.0 * M_PI * i / (win - 1));

  Eigen::FFT<float> fft;
  std::vector<float> frame(cfg.fft_size, 0.0f);
  std::vector<std::complex<float>> spec;
  int bins = cfg.fft_size / 2 + 1;

  LogMelSpectrogram out;
  out.values = Tensor({cfg.n_mels, T});
  std::vector<float> power(bins);
  for (int t = 0; t < T; ++t) {
    const double* src = &w.samples[static_cast<size_t>(t) * hop];
    for (int i = 0; i < win; ++i) frame[i] = static_cast<float>(src[i]) * hann[i];
    std::fill(frame.begin() + win, frame.end(), 0.0f);
    fft.fwd(spec, frame);
    for (int k = 0; k < bins; ++k) power[k] = std::norm(spec[k]);
    for (int m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      const auto& row = fb[m];
      for (int k = 0; k < bins; ++k) e += row[k] * power[k];
      out.values.data[static_cast<int64_t>(m) * T + t] =
          std::log(static_cast<float>(e) + cfg.log_floor);
    }
  }
  return out;
}

// Zero-mean unit-variance over the whole F x T plane.
inline LogMelSpectrogram instance_normalize(const LogMelSpectrogram& s, float eps = 1e-8f) {
  if (s.num_frames() < 2)
    throw std::invalid_argument("instance_normalize: need at least 2 frames");
  double sum = 0, sum2 = 0;
  for (float v : s.values.data) {
    sum += v;
    sum2 += static_cast<double>(v) * v;
  }
  double n = static_cast<double>(s.values.size());
  double mean = sum / n;
  double var = std::max(0.0, sum2 / n - mean * mean);
  float inv = static_cast<float>(1.0 / std::sqrt(var + eps));
  LogMelSpectrogram out;
  out.values = Tensor(s.values.shape);
  for (int64_t i = 0; i < s.values.size(); ++i)
    out.values.data[i] = (s.values.data[i] - static_cast<float>(mean)) * inv;
  return out;
}

struct SpecAugmentPolicy {
  int num_freq_masks = 1;
  int max_freq_width = 8;
  int num_time_masks = 1;
  int max_time_width = 10;

  void validate(int n_mels, int min_frames) const {
    if (max_freq_width >= n_mels)
      throw std::invalid_argument("spec_augment: freq mask width >= n_mels");
    if (max_time_width >= min_frames)
      throw std::invalid_argument("spec_augment: time mask width >= num frames");
  }
};

// Zero-fill masking. Deterministic for a given rng state.
inline LogMelSpectrogram spec_augment(const LogMelSpectrogram& s,
                                      const SpecAugmentPolicy& policy, std::mt19937& rng) {
  int F = s.num_mels(), T = s.num_frames();
  policy.validate(F, T);
  LogMelSpectrogram out;
  out.values = s.values;
  for (int k = 0; k < policy.num_freq_masks; ++k) {
    int w = std::uniform_int_distribution<int>(0, policy.max_freq_width)(rng);
    int f0 = std::uniform_int_distribution<int>(0, F - w)(rng);
    for (int f = f0; f < f0 + w; ++f)
      for (int t = 0; t < T; ++t) out.values.data[static_cast<int64_t>(f) * T + t] = 0.0f;
  }
  for (int k = 0; k < policy.num_time_masks; ++k) {
    int w = std::uniform_int_distribution<int>(0, policy.max_time_width)(rng);
    int t0 = std::uniform_int_distribution<int>(0, T - w)(rng);
    for (int f = 0; f < F; ++f)
      for (int t = t0; t < t0 + w; ++t) out.values.data[static_cast<int64_t>(f) * T + t] = 0.0f;
  }
  return out;
}

}  // namespace paranoise
