#include <gtest/gtest.h>

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <numeric>

#include "bdlab/attack/trigger.h"
#include "bdlab/eval/metrics.h"
#include "test_util.h"

namespace bdlab {
namespace {

LabeledDataset corpus(int k = 4, int m = 6) {
  SynthConfig sc;
  sc.num_classes = k;
  sc.samples_per_class = m;
  sc.duration_s = 0.5;
  return synth_corpus(sc);
}

// A network whose logits ignore the input: fc1 weights zero, bias favours c.
NetworkModel constant_model(const LabeledDataset& d, int c) {
  const FeatureSet f = make_feature_set(d.subset({0}), MfccConfig{});
  NetworkModel m = build_model(ArchSpec::small_cnn(f.n_mfcc(), f.n_frames(), d.num_classes()),
                               d.vocabulary(), 3);
  m.param("fc1.weight").fill(0.0f);
  m.param("fc1.bias").fill(0.0f);
  m.param("fc1.bias")[static_cast<std::size_t>(c)] = 10.0f;
  return m;
}

Trigger chirp(int target, const LabeledDataset& d) {
  return designated_trigger(d.nominal_length() / 2, kDefaultSampleRate, 0.05, 4,
                            d.vocabulary()[static_cast<std::size_t>(target)], target);
}

TEST(BenignAccuracy, ConstantPredictorScoresItsShare) {
  const LabeledDataset d = corpus();
  // Three samples of class 1 out of 9 kept.
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < d.size() && keep.size() < 9; ++i) {
    if (d[i].label != 1 || std::count_if(keep.begin(), keep.end(),
                                          [&](std::size_t j) { return d[j].label == 1; }) < 3) {
      keep.push_back(i);
    }
  }
  const LabeledDataset s = d.subset(keep);
  const double share = static_cast<double>(s.count(1)) / s.size();
  EXPECT_DOUBLE_EQ(benign_accuracy(constant_model(d, 1), s), share);
  EXPECT_THROW(benign_accuracy(constant_model(d, 1), LabeledDataset(d.vocabulary(), d.nominal_length())),
               std::invalid_argument);
}

TEST(BenignAccuracy, PlusMisclassificationIsOne) {
  const LabeledDataset d = corpus();
  const NetworkModel m = constant_model(d, 2);
  const FeatureSet f = make_feature_set(d, MfccConfig{});
  const std::vector<int> pred = predict_labels(m, f.inputs);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i] != f.labels[i];
  EXPECT_EQ(benign_accuracy(m, d) + static_cast<double>(wrong) / d.size(), 1.0);
}

TEST(AttackSuccess, AlwaysAndNeverTarget) {
  const LabeledDataset d = corpus();
  const Trigger t = chirp(0, d);
  AttackOptions o;
  o.seed = 5;
  EXPECT_EQ(attack_success_rate(constant_model(d, 0), d, 0, t, o), 1.0);
  EXPECT_EQ(attack_success_rate(constant_model(d, 3), d, 0, t, o), 0.0);
  // The triggered set holds the non-target samples only.
  const LabeledDataset trig = triggered_set(d, 0, t, o);
  EXPECT_EQ(trig.size(), d.size() - d.count(0));
  for (const Sample& s : trig.samples()) EXPECT_NE(s.label, 0);
}

TEST(AttackSuccess, OnlyTargetSamplesRejected) {
  const LabeledDataset d = corpus();
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i].label == 2) keep.push_back(i);
  }
  EXPECT_THROW(attack_success_rate(constant_model(d, 2), d.subset(keep), 2, chirp(2, d), {}),
               std::invalid_argument);
  EXPECT_THROW(triggered_set(d, 9, chirp(2, d), {}), std::out_of_range);
  AttackOptions o;
  o.policy = PositionPolicy::kFixed;
  o.fixed_tau = d.nominal_length();
  EXPECT_THROW(triggered_set(d, 1, chirp(1, d), o), std::out_of_range);
}

TEST(AttackSuccess, OrderInvariantAndReproducible) {
  const LabeledDataset d = corpus();
  const Trigger t = chirp(1, d);
  AttackOptions o;
  o.seed = 11;
  const LabeledDataset a = triggered_set(d, 1, t, o);
  std::vector<std::size_t> rev(d.size());
  std::iota(rev.rbegin(), rev.rend(), std::size_t{0});
  const LabeledDataset b = triggered_set(d.subset(rev), 1, t, o);
  ASSERT_EQ(a.size(), b.size());
  for (const Sample& s : a.samples()) {
    const auto it = std::find_if(b.samples().begin(), b.samples().end(),
                                 [&](const Sample& x) { return x.id == s.id; });
    ASSERT_NE(it, b.samples().end());
    EXPECT_EQ(it->wave, s.wave) << s.id;
  }
  EXPECT_EQ(triggered_set(d, 1, t, o).digest(), a.digest());
  o.seed = 12;
  EXPECT_NE(triggered_set(d, 1, t, o).digest(), a.digest());
}

TEST(ClassWise, DiagonalUnavailableAndColumnOfOnes) {
  const LabeledDataset d = corpus(3, 4);
  const NetworkModel always1 = constant_model(d, 1);
  const NetworkModel never = constant_model(d, 0);  // never predicts 1 or 2
  std::map<int, const NetworkModel*> models = {{0, &never}, {1, &always1}, {2, &never}};
  std::map<int, Trigger> triggers;
  for (int t = 0; t < 3; ++t) triggers.emplace(t, chirp(t, d));
  const ClassWiseAsr m = class_wise_asr(models, d, triggers, AttackOptions{});
  ASSERT_EQ(m.size(), 3);
  ASSERT_EQ(m.cells.size(), 9u);
  for (int a = 0; a < 3; ++a) {
    EXPECT_FALSE(m.at(a, a).has_value());
    if (a != 1) {
      EXPECT_EQ(*m.at(a, 1), 1.0);
    }
  }
  EXPECT_EQ(*m.at(1, 2), 0.0);
  // The class-0 predictor misses target 2 but hits target 0 everywhere.
  EXPECT_EQ(*m.at(0, 2), 0.0);
  EXPECT_EQ(*m.at(1, 0), 1.0);
  const std::string csv = m.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "actual\\target,w0,w1,w2");
  EXPECT_NE(csv.find("w0,,1,0"), std::string::npos);

  triggers.erase(2);
  EXPECT_THROW(class_wise_asr(models, d, triggers, AttackOptions{}), std::invalid_argument);
}

double reference_p(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  std::vector<double> diff(n);
  for (std::size_t i = 0; i < n; ++i) diff[i] = a[i] - b[i];
  const double mean = std::accumulate(diff.begin(), diff.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : diff) ss += (v - mean) * (v - mean);
  const double t = mean / std::sqrt(ss / (n - 1) / n);
  boost::math::students_t dist(static_cast<double>(n - 1));
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

TEST(PairedTTest, WorkedExampleMatchesReference) {
  const std::vector<double> a = {1, 2, 3, 4, 5}, b = {2, 3, 4, 5, 7};
  const TTestResult r = paired_t_test(a, b);
  EXPECT_EQ(r.df, 4);
  // Differences (-1,-1,-1,-1,-2): mean -1.2, sd sqrt(0.2), t = -1.2/(sqrt(0.2)/sqrt(5)) = -6.
  EXPECT_NEAR(r.t, -6.0, 1e-12);
  EXPECT_NEAR(r.p, reference_p(a, b), 1e-6);
  EXPECT_NEAR(r.mean_diff, -1.2, 1e-12);
}

TEST(PairedTTest, EqualInputsAndErrors) {
  const std::vector<double> a = {0.3, 0.9, 0.1};
  const TTestResult r = paired_t_test(a, a);
  EXPECT_EQ(r.t, 0.0);
  EXPECT_EQ(r.p, 1.0);
  EXPECT_THROW(paired_t_test(a, std::vector<double>{1, 2}), std::invalid_argument);
  EXPECT_THROW(paired_t_test(std::vector<double>{1}, std::vector<double>{2}), std::invalid_argument);
}

TEST(PairedTTest, CdfAgreesWithBoostAcrossDf) {
  for (double df : {1.0, 2.0, 4.0, 9.0, 30.0}) {
    boost::math::students_t dist(df);
    for (double t : {-8.0, -2.5, -0.3, 0.0, 0.7, 1.9, 12.0}) {
      EXPECT_NEAR(student_t_cdf(t, df), boost::math::cdf(dist, t), 1e-9) << df << " " << t;
    }
  }
  EXPECT_THROW(student_t_cdf(1.0, 0.0), std::invalid_argument);
}

TEST(Report, RoundTripWithNullDiagonal) {
  TempDir tmp;
  EvalReport r;
  r.ba = 0.9375;
  r.asr = 0.5;
  r.n_benign = 48;
  r.n_attack = 42;
  r.target_name = "w1";
  r.extra = {{"p", 0.01}};
  r.config_digest = "abc123";
  ClassWiseAsr m;
  m.vocabulary = {"w0", "w1"};
  m.cells = {std::nullopt, 0.25, 1.0, std::nullopt};
  r.class_wise = m;
  write_report(r, tmp.path() / "r.json");
  const EvalReport q = read_report(tmp.path() / "r.json");
  EXPECT_EQ(q.ba, r.ba);
  EXPECT_EQ(q.asr, r.asr);
  EXPECT_EQ(q.n_benign, r.n_benign);
  EXPECT_EQ(q.n_attack, r.n_attack);
  EXPECT_EQ(q.target_name, r.target_name);
  EXPECT_EQ(q.extra, r.extra);
  EXPECT_EQ(q.config_digest, r.config_digest);
  ASSERT_TRUE(q.class_wise.has_value());
  EXPECT_EQ(q.class_wise->cells, m.cells);

  const std::string text = read_text(tmp.path() / "r.json");
  EXPECT_NE(text.find("null"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(tmp.path() / "r.classwise.csv"));
}

TEST(Report, SchemaMismatchAndInvalidRejected) {
  TempDir tmp;
  EvalReport r;
  r.ba = 1.0;
  write_report(r, tmp.path() / "r.json");
  std::string text = read_text(tmp.path() / "r.json");
  const auto pos = text.find("\"schema_version\"");
  ASSERT_NE(pos, std::string::npos);
  const auto digit = text.find('1', pos);
  text[digit] = '7';
  write_text(tmp.path() / "bad.json", text);
  EXPECT_THROW(read_report(tmp.path() / "bad.json"), std::runtime_error);

  r.asr = 1.5;
  EXPECT_THROW(r.validate(), std::invalid_argument);
  r.asr = 0.5;
  ClassWiseAsr m;
  m.vocabulary = {"a", "b"};
  m.cells = {0.0, 0.1, 0.2, std::nullopt};
  r.class_wise = m;
  EXPECT_THROW(r.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace bdlab
