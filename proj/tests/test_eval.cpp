#include <gtest/gtest.h>

#include "paranoise/eval.hpp"

using namespace paranoise;

namespace {

// Independent brute-force EER: FAR/FRR at every midpoint between consecutive
// sorted scores plus +-inf, linear interpolation at the crossing.
double eer_bruteforce(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::vector<double> uniq = scores;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  std::vector<double> grid{uniq.front() - 1.0};
  for (size_t i = 0; i + 1 < uniq.size(); ++i) grid.push_back((uniq[i] + uniq[i + 1]) / 2);
  grid.push_back(uniq.back() + 1.0);

  int64_t n_tar = 0, n_non = 0;
  for (int y : labels) (y ? n_tar : n_non)++;

  double far_prev = 0, frr_prev = 0;
  bool have_prev = false;
  for (double t : grid) {
    int64_t fa = 0, fr = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
      if (labels[i] == 0 && scores[i] >= t) ++fa;
      if (labels[i] == 1 && scores[i] < t) ++fr;
    }
    double far = static_cast<double>(fa) / n_non;
    double frr = static_cast<double>(fr) / n_tar;
    if (frr >= far) {
      if (frr == far || !have_prev) return far;
      double u = (far_prev - frr_prev) / ((frr - frr_prev) - (far - far_prev));
      return far_prev + u * (far - far_prev);
    }
    far_prev = far;
    frr_prev = frr;
    have_prev = true;
  }
  return 1.0;  // unreachable for two-class input
}

}  // namespace

// --- cosine ------------------------------------------------------------------

TEST(Cosine, BasicGeometry) {
  std::vector<float> e{1.0f, 2.0f, -3.0f};
  std::vector<float> neg{-1.0f, -2.0f, 3.0f};
  std::vector<float> orth{2.0f, -1.0f, 0.0f};
  EXPECT_NEAR(cosine_score(e, e), 1.0, 1e-12);
  EXPECT_NEAR(cosine_score(e, neg), -1.0, 1e-12);
  EXPECT_NEAR(cosine_score(e, orth), 0.0, 1e-12);
}

TEST(Cosine, RejectsZeroAndMismatched) {
  std::vector<float> e{1.0f, 2.0f};
  std::vector<float> zero{0.0f, 0.0f};
  std::vector<float> longer{1.0f, 2.0f, 3.0f};
  EXPECT_THROW(cosine_score(e, zero), std::invalid_argument);
  EXPECT_THROW(cosine_score(e, longer), std::invalid_argument);
}

// --- EER ---------------------------------------------------------------------

TEST(Eer, PerfectSeparationIsZero) {
  ScoreSet s;
  s.scores = {1.0, 1.0, 0.0, 0.0};
  s.labels = {1, 1, 0, 0};
  EXPECT_DOUBLE_EQ(compute_eer(s).eer, 0.0);
}

TEST(Eer, IdenticalDistributionsGiveChance) {
  ScoreSet s;
  s.scores = {0.1, 0.4, 0.7, 0.1, 0.4, 0.7};
  s.labels = {1, 1, 1, 0, 0, 0};
  EXPECT_NEAR(compute_eer(s).eer, 0.5, 1e-12);
}

TEST(Eer, InterleavedKnownCase) {
  ScoreSet s;
  s.scores = {0.9, 0.8, 0.3, 0.2};
  s.labels = {1, 0, 1, 0};
  EXPECT_NEAR(compute_eer(s).eer, 0.5, 1e-12);
}

TEST(Eer, RejectsDegenerateInput) {
  ScoreSet one_class;
  one_class.scores = {0.1, 0.2};
  one_class.labels = {1, 1};
  EXPECT_THROW(compute_eer(one_class), std::invalid_argument);
  ScoreSet bad;
  bad.scores = {0.1, 0.2};
  bad.labels = {1, 2};
  EXPECT_THROW(compute_eer(bad), std::invalid_argument);
  EXPECT_THROW(compute_eer(ScoreSet{}), std::invalid_argument);
}

TEST(Eer, MatchesBruteForceOnRandomSets) {
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    size_t n = 2 + static_cast<size_t>(u(rng) * 998);
    ScoreSet s;
    s.scores.resize(n);
    s.labels.resize(n);
    for (size_t i = 0; i < n; ++i) {
      s.labels[i] = i % 2;  // both classes guaranteed
      // targets shifted up a little; some trials with heavy ties
      double v = u(rng) + 0.3 * s.labels[i];
      if (trial % 3 == 0) v = std::round(v * 8) / 8;  // tie-heavy
      s.scores[i] = v;
    }
    EXPECT_NEAR(compute_eer(s).eer, eer_bruteforce(s.scores, s.labels), 1e-9) << trial;
  }
}

TEST(Eer, InvariantUnderMonotoneTransform) {
  std::mt19937 rng(23);
  std::normal_distribution<double> g(0.0, 1.0);
  ScoreSet s;
  for (int i = 0; i < 300; ++i) {
    s.labels.push_back(i % 2);
    s.scores.push_back(g(rng) + 0.8 * s.labels.back());
  }
  double base = compute_eer(s).eer;
  ScoreSet cubed = s;
  for (double& v : cubed.scores) v = v * v * v + 2 * v;  // strictly increasing
  EXPECT_NEAR(compute_eer(cubed).eer, base, 1e-9);
  ScoreSet expd = s;
  for (double& v : expd.scores) v = std::exp(v);
  EXPECT_NEAR(compute_eer(expd).eer, base, 1e-9);
}

TEST(Eer, SymmetricUnderNegationAndLabelFlip) {
  std::mt19937 rng(29);
  std::normal_distribution<double> g(0.0, 1.0);
  ScoreSet s;
  for (int i = 0; i < 301; ++i) {
    s.labels.push_back(i % 2);
    s.scores.push_back(g(rng) + 0.5 * s.labels.back());
  }
  ScoreSet flipped = s;
  for (double& v : flipped.scores) v = -v;
  for (int& y : flipped.labels) y = 1 - y;
  EXPECT_NEAR(compute_eer(flipped).eer, compute_eer(s).eer, 1e-9);
}

// --- trials and reports ------------------------------------------------------

TEST(Trials, ParsesWhitespaceSeparatedLines) {
  std::istringstream in("1 a.wav b.wav\n0 c.wav d.wav\n\n");
  auto trials = parse_trials(in);
  ASSERT_EQ(trials.size(), 2u);
  EXPECT_EQ(trials[0].label, 1);
  EXPECT_EQ(trials[1].test_path, "d.wav");
}

TEST(Trials, RejectsMalformedLines) {
  std::istringstream missing("1 a.wav\n");
  EXPECT_THROW(parse_trials(missing), std::runtime_error);
  std::istringstream badlabel("2 a.wav b.wav\n");
  EXPECT_THROW(parse_trials(badlabel), std::runtime_error);
}

TEST(Report, StandardConditionsMatchTableLayout) {
  auto conds = standard_conditions();
  ASSERT_EQ(conds.size(), 16u);
  EXPECT_TRUE(conds[0].clean);
  int per_cat[4] = {0, 0, 0, 0};
  for (size_t i = 1; i < conds.size(); ++i) per_cat[static_cast<int>(conds[i].category)]++;
  EXPECT_EQ(per_cat[static_cast<int>(NoiseCategory::kBabble)], 5);
  EXPECT_EQ(per_cat[static_cast<int>(NoiseCategory::kMusic)], 5);
  EXPECT_EQ(per_cat[static_cast<int>(NoiseCategory::kNoise)], 5);
  EXPECT_EQ(per_cat[static_cast<int>(NoiseCategory::kNonspeech)], 0);
}

TEST(Report, AverageIsArithmeticMean) {
  ConditionReport r;
  r.results.push_back({{true, NoiseCategory::kNoise, 0.0}, 2.0, 10});
  r.results.push_back({{false, NoiseCategory::kMusic, 5.0}, 4.0, 10});
  r.results.push_back({{false, NoiseCategory::kBabble, 0.0}, 9.0, 10});
  EXPECT_DOUBLE_EQ(r.average_eer_percent(), 5.0);
  // one machine-readable line per condition plus the average line
  std::string mr = r.machine_readable();
  EXPECT_EQ(std::count(mr.begin(), mr.end(), '\n'), 4);
}

namespace {

struct FakeEvalSetup {
  std::map<std::string, Waveform> files;
  std::vector<ManifestRecord> noise;
  std::vector<Trial> trials;

  FakeEvalSetup() {
    const int sr = 16000;
    auto tone = [&](double f, unsigned jitter_seed) {
      Waveform w;
      std::mt19937 rng(jitter_seed);
      std::normal_distribution<double> g(0.0, 0.01);
      w.samples.resize(sr);
      for (int i = 0; i < sr; ++i)
        w.samples[i] = 0.4 * std::sin(2 * M_PI * f * i / sr) + g(rng);
      return w;
    };
    files["mem://a1"] = tone(150, 1);
    files["mem://a2"] = tone(150, 2);
    files["mem://b1"] = tone(420, 3);
    files["mem://b2"] = tone(420, 4);
    std::mt19937 rng(5);
    std::normal_distribution<double> g(0.0, 0.2);
    Waveform n;
    n.samples.resize(sr);
    for (auto& v : n.samples) v = g(rng);
    files["mem://noise0"] = n;
    noise.push_back({"noise_0", "noise", "mem://noise0", 1.0});
    trials = {{1, "mem://a1", "mem://a2"},
              {0, "mem://a1", "mem://b1"},
              {1, "mem://b1", "mem://b2"},
              {0, "mem://a2", "mem://b2"}};
  }

  AudioLoader loader() const {
    return [this](const std::string& p) { return files.at(p); };
  }

  // band-energy embedding around the two tone frequencies: separates the
  // speakers without any learned model
  static std::vector<float> embed(const Waveform& w) {
    const int sr = 16000;
    std::vector<float> e;
    for (double f : {150.0, 420.0}) {
      double re = 0, im = 0;
      for (size_t i = 0; i < w.samples.size(); ++i) {
        re += w.samples[i] * std::cos(2 * M_PI * f * i / sr);
        im += w.samples[i] * std::sin(2 * M_PI * f * i / sr);
      }
      e.push_back(static_cast<float>(std::sqrt(re * re + im * im)));
    }
    return e;
  }
};

}  // namespace

TEST(RunTrials, CleanConditionSeparatesTonesPerfectly) {
  FakeEvalSetup setup;
  std::vector<EvalCondition> conds{{true, NoiseCategory::kNoise, 0.0},
                                   {false, NoiseCategory::kNoise, 15.0}};
  auto report = run_trials(FakeEvalSetup::embed, setup.trials, setup.noise, conds, 7,
                           setup.loader());
  ASSERT_EQ(report.results.size(), 2u);
  EXPECT_DOUBLE_EQ(report.results[0].eer_percent, 0.0);
  EXPECT_EQ(report.results[0].num_trials, 4);
  EXPECT_GE(report.results[1].eer_percent, 0.0);
}

TEST(RunTrials, DeterministicForFixedSeed) {
  FakeEvalSetup setup;
  std::vector<EvalCondition> conds{{false, NoiseCategory::kNoise, 5.0}};
  auto a = run_trials(FakeEvalSetup::embed, setup.trials, setup.noise, conds, 11,
                      setup.loader());
  auto b = run_trials(FakeEvalSetup::embed, setup.trials, setup.noise, conds, 11,
                      setup.loader());
  EXPECT_EQ(a.machine_readable(), b.machine_readable());
}

TEST(RunTrials, MissingNoiseCategoryAborts) {
  FakeEvalSetup setup;
  std::vector<EvalCondition> conds{{false, NoiseCategory::kMusic, 5.0}};
  EXPECT_THROW(run_trials(FakeEvalSetup::embed, setup.trials, setup.noise, conds, 0,
                          setup.loader()),
               std::runtime_error);
}
