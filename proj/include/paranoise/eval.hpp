// Trial scoring, equal error rate with linear interpolation at the FAR/FRR
// crossing, and per-noise-condition reporting.
#pragma once

#include <iomanip>

#include "paranoise/datapipe.hpp"

namespace paranoise {

// Cosine similarity of two embeddings.
inline double cosine_score(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("cosine_score: dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine_score: zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

struct ScoreSet {
  std::vector<double> scores;
  std::vector<int> labels;  // 1 = same speaker
  std::string condition = "clean";
};

struct EerResult {
  double eer = 0.0;        // fraction in [0, ~0.5]
  double threshold = 0.0;  // score at the FAR/FRR crossing
};

// FAR(t) = P(score >= t | nontarget), FRR(t) = P(score < t | target).
// Sweeps thresholds over the sorted unique scores and interpolates linearly
// between the pair bracketing the crossing.
inline EerResult compute_eer(const ScoreSet& s) {
  if (s.scores.size() != s.labels.size() || s.scores.empty())
    throw std::invalid_argument("compute_eer: scores/labels mismatch");
  int64_t n_tar = 0, n_non = 0;
  for (int y : s.labels) {
    if (y != 0 && y != 1) throw std::invalid_argument("compute_eer: labels must be 0/1");
    (y ? n_tar : n_non)++;
  }
  if (n_tar == 0 || n_non == 0)
    throw std::invalid_argument("compute_eer: need both target and non-target trials");

  std::vector<std::pair<double, int>> sorted(s.scores.size());
  for (size_t i = 0; i < s.scores.size(); ++i) sorted[i] = {s.scores[i], s.labels[i]};
  std::sort(sorted.begin(), sorted.end());

  // candidate thresholds in increasing order: -inf, each unique score, +inf
  std::vector<double> thresholds{sorted.front().first - 1.0};
  for (const auto& [v, y] : sorted)
    if (v != thresholds.back()) thresholds.push_back(v);
  thresholds.push_back(sorted.back().first + 1.0);

  // at -inf everything is accepted: FAR = 1, FRR = 0; FRR climbs and FAR
  // falls as the threshold rises, so the first point with FRR >= FAR brackets
  // the crossing together with its predecessor
  double far_prev = 1.0, frr_prev = 0.0, thr_prev = thresholds.front();
  int64_t non_ge = n_non, tar_lt = 0;
  size_t idx = 0;
  for (size_t k = 1; k < thresholds.size(); ++k) {
    double thr = thresholds[k];
    while (idx < sorted.size() && sorted[idx].first < thr) {
      if (sorted[idx].second)
        ++tar_lt;
      else
        --non_ge;
      ++idx;
    }
    double far = static_cast<double>(non_ge) / n_non;
    double frr = static_cast<double>(tar_lt) / n_tar;
    if (frr >= far) {
      if (frr == far) return {far, thr};
      double u = (far_prev - frr_prev) / ((frr - frr_prev) - (far - far_prev));
      return {far_prev + u * (far - far_prev), thr_prev + u * (thr - thr_prev)};
    }
    far_prev = far;
    frr_prev = frr;
    thr_prev = thr;
  }
  throw std::logic_error("compute_eer: no FAR/FRR crossing found");
}

// --- trials ------------------------------------------------------------------

struct Trial {
  int label = 0;  // 1 = same speaker
  std::string enroll_path;
  std::string test_path;
};

// Line format: "label enroll_path test_path", whitespace-separated.
inline std::vector<Trial> parse_trials(std::istream& in,
                                       const std::string& origin = "<stream>") {
  std::vector<Trial> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    Trial t;
    if (!(ls >> t.label >> t.enroll_path >> t.test_path) || (t.label != 0 && t.label != 1))
      throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                               ": malformed trial line");
    out.push_back(std::move(t));
  }
  return out;
}

inline std::vector<Trial> load_trials(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open trial list: " + path);
  return parse_trials(f, path);
}

// --- condition reports -------------------------------------------------------

struct EvalCondition {
  bool clean = true;
  NoiseCategory category = NoiseCategory::kNoise;
  double snr_db = 0.0;

  std::string name() const {
    if (clean) return "clean";
    std::ostringstream os;
    os << category_name(category) << "@" << snr_db << "dB";
    return os.str();
  }
};

// Clean + {babble, music, noise} x {0,5,10,15,20} dB: 16 cells.
inline std::vector<EvalCondition> standard_conditions() {
  std::vector<EvalCondition> out{{true, NoiseCategory::kNoise, 0.0}};
  for (NoiseCategory c :
       {NoiseCategory::kBabble, NoiseCategory::kMusic, NoiseCategory::kNoise})
    for (double snr : {0.0, 5.0, 10.0, 15.0, 20.0}) out.push_back({false, c, snr});
  return out;
}

struct ConditionResult {
  EvalCondition condition;
  double eer_percent = 0.0;
  int64_t num_trials = 0;
};

struct ConditionReport {
  std::vector<ConditionResult> results;

  // arithmetic mean over all listed conditions (clean included)
  double average_eer_percent() const {
    if (results.empty()) throw std::logic_error("empty report");
    double s = 0;
    for (const auto& r : results) s += r.eer_percent;
    return s / results.size();
  }

  std::string machine_readable() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    for (const auto& r : results)
      os << r.condition.name() << '\t' << std::setprecision(1)
         << (r.condition.clean ? 0.0 : r.condition.snr_db) << '\t' << std::setprecision(4)
         << r.eer_percent << '\t' << r.num_trials << '\n';
    os << "average\t-\t" << std::setprecision(4) << average_eer_percent() << "\t-\n";
    return os.str();
  }

  std::string human_readable() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os << "condition            EER%    trials\n";
    for (const auto& r : results)
      os << std::left << std::setw(20) << r.condition.name() << ' ' << std::right
         << std::setw(7) << std::setprecision(3) << r.eer_percent << ' ' << std::setw(9)
         << r.num_trials << '\n';
    os << "average (over all conditions incl. clean): " << std::setprecision(3)
       << average_eer_percent() << "%\n";
    return os.str();
  }
};

// Maps a waveform to a final speaker embedding.
using Embedder = std::function<std::vector<float>(const Waveform&)>;

// Scores every trial under every condition. Enrollment stays clean; the test
// side is mixed at the stated SNR with a per-(condition, trial) derived seed
// so reports are reproducible. Any missing file aborts the whole report.
inline ConditionReport run_trials(const Embedder& embed, const std::vector<Trial>& trials,
                                  const std::vector<ManifestRecord>& noise_manifest,
                                  const std::vector<EvalCondition>& conditions,
                                  uint64_t seed = 0, const AudioLoader& load = read_wav) {
  if (trials.empty()) throw std::invalid_argument("run_trials: no trials");

  // clean embeddings are shared across conditions
  std::map<std::string, std::vector<float>> clean_emb;
  auto clean_embedding = [&](const std::string& path) -> const std::vector<float>& {
    auto it = clean_emb.find(path);
    if (it == clean_emb.end()) it = clean_emb.emplace(path, embed(load(path))).first;
    return it->second;
  };

  std::vector<const ManifestRecord*> by_cat[4];
  for (const auto& r : noise_manifest)
    by_cat[static_cast<int>(category_from_name(r.speaker_id))].push_back(&r);

  ConditionReport report;
  for (size_t ci = 0; ci < conditions.size(); ++ci) {
    const auto& cond = conditions[ci];
    const auto& pool = by_cat[static_cast<int>(cond.category)];
    if (!cond.clean && pool.empty())
      throw std::runtime_error("run_trials: no noise files for category " +
                               category_name(cond.category));

    ScoreSet set;
    set.condition = cond.name();
    for (size_t ti = 0; ti < trials.size(); ++ti) {
      const Trial& t = trials[ti];
      const auto& e1 = clean_embedding(t.enroll_path);
      std::vector<float> e2;
      if (cond.clean) {
        e2 = clean_embedding(t.test_path);
      } else {
        std::mt19937 rng(static_cast<unsigned>(seed * 1315423911u + ci * 2654435761u + ti));
        Waveform test = load(t.test_path);
        const ManifestRecord* nrec =
            pool[std::uniform_int_distribution<size_t>(0, pool.size() - 1)(rng)];
        Waveform noise_full = load(nrec->audio_path);
        int64_t off = std::uniform_int_distribution<int64_t>(
            0, static_cast<int64_t>(noise_full.samples.size()) - 1)(rng);
        Waveform fitted = fit_noise(noise_full, test.samples.size(), off);
        e2 = embed(mix_at_snr(test, fitted, cond.snr_db).mixed);
      }
      set.scores.push_back(cosine_score(e1, e2));
      set.labels.push_back(t.label);
    }
    ConditionResult res;
    res.condition = cond;
    res.eer_percent = compute_eer(set).eer * 100.0;
    res.num_trials = static_cast<int64_t>(trials.size());
    report.results.push_back(res);
  }
  return report;
}

}  // namespace paranoise
