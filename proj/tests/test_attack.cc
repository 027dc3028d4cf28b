#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <set>

#include "bdlab/attack/poison.h"
#include "bdlab/attack/trigger.h"
#include "bdlab/dsp/mixing.h"
#include "bdlab/dsp/wav.h"
#include "bdlab/model/training.h"
#include "bdlab/util/random.h"
#include "test_util.h"

namespace bdlab {
namespace {

LabeledDataset noise_corpus(const std::vector<std::string>& classes, int per_class, std::size_t n,
                            std::uint64_t seed) {
  LabeledDataset d(classes, n);
  Rng rng = make_rng(seed);
  for (int k = 0; k < static_cast<int>(classes.size()); ++k) {
    for (int i = 0; i < per_class; ++i) {
      std::vector<double> x(n);
      for (double& v : x) v = uniform_real(rng, -0.5, 0.5);
      d.add(classes[k] + "/" + std::to_string(i), Waveform(std::move(x)), k);
    }
  }
  return d;
}

Trigger small_trigger(std::size_t l, double eps, std::uint64_t seed) {
  Trigger t;
  std::vector<double> x(l);
  Rng rng = make_rng(seed);
  for (double& v : x) v = uniform_real(rng, -eps, eps);
  t.delta = Waveform(std::move(x));
  t.epsilon = eps;
  t.target_name = "t";
  t.target_label = 0;
  return t;
}

TEST(Surrogate, UnionArithmeticAndErrors) {
  const LabeledDataset target = noise_corpus({"t"}, 100, 64, 1);
  const LabeledDataset aux = noise_corpus({"a", "b", "c", "d"}, 100, 64, 2);
  const SurrogateDataset s = build_surrogate_dataset(target, aux);
  EXPECT_EQ(s.data.size(), 500u);
  EXPECT_EQ(s.data.num_classes(), 5);
  EXPECT_EQ(s.target_label, 4);
  EXPECT_EQ(s.data.vocabulary().back(), "t");
  std::multiset<std::string> ids;
  for (const Sample& x : s.data.samples()) {
    if (x.label == s.target_label) ids.insert(x.id);
  }
  EXPECT_EQ(ids.size(), 100u);
  EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), 100u);

  const LabeledDataset clash = noise_corpus({"b"}, 3, 64, 3);
  EXPECT_THROW(build_surrogate_dataset(clash, aux), std::invalid_argument);
  EXPECT_THROW(build_surrogate_dataset(LabeledDataset({"t"}, 64), aux), std::invalid_argument);
  EXPECT_THROW(build_surrogate_dataset(noise_corpus({"t", "u"}, 2, 64, 4), aux), std::invalid_argument);
}

TEST(TriggerFile, SaveLoadExactAndValidated) {
  TempDir tmp;
  Trigger t = small_trigger(400, 0.05, 5);
  t.record.seed = 9;
  t.record.loss_curve = {2.0, 1.5};
  t.record.config_digest = "abc";
  save_trigger(t, tmp.path() / "trig.wav");
  const Trigger r = load_trigger(tmp.path() / "trig.wav");
  EXPECT_EQ(r.delta, t.delta);
  EXPECT_EQ(r.epsilon, t.epsilon);
  EXPECT_EQ(r.record.loss_curve, t.record.loss_curve);
  EXPECT_EQ(r.record.config_digest, "abc");
  EXPECT_EQ(r.digest(), t.digest());
  EXPECT_TRUE(std::filesystem::exists(trigger_sidecar(tmp.path() / "trig.wav")));
  // The listening copy is quantised, the sidecar is exact.
  const Waveform pcm = load_wav(tmp.path() / "trig.wav");
  for (std::size_t i = 0; i < pcm.size(); ++i) EXPECT_NEAR(pcm[i], t.delta[i], 1.5 / 32768);

  Trigger loud = t;
  loud.epsilon = 0.01;
  EXPECT_THROW(loud.validate(), std::invalid_argument);
  EXPECT_THROW(save_trigger(loud, tmp.path() / "loud.wav"), std::invalid_argument);
}

TEST(TriggerObjective, MatchesFiniteDifferencesWithNoiseAndClip) {
  ArchSpec arch = ArchSpec::small_cnn(4, 9, 3);
  arch.conv_channels = {2, 3};
  arch.dense_width = 4;
  const Network<double> net(arch, {"a", "b", "c"}, 3);
  MfccConfig fc;
  fc.sample_rate = 8000;
  fc.n_fft = 16;
  fc.hop_length = 8;
  fc.n_mels = 6;
  fc.n_mfcc = 4;
  const MfccExtractor ex(fc);
  Rng rng = make_rng(6);
  std::vector<double> h1(64), h2(64), noise(64), delta(20);
  for (double& v : h1) v = uniform_real(rng, -0.4, 0.4);
  for (double& v : h2) v = uniform_real(rng, -0.4, 0.4);
  for (double& v : noise) v = uniform_real(rng, -0.05, 0.05);
  for (double& v : delta) v = uniform_real(rng, -0.05, 0.05);
  h2[30] = 0.99;  // pushes one triggered sample through the clip
  const std::vector<TriggerVisit> visits = {{h1, 0, {}}, {h2, 44, {}}, {h1, 17, noise}};
  const TriggerObjective o = trigger_objective(net, ex, visits, delta, 1);
  for (std::size_t i = 0; i < delta.size(); ++i) {
    std::vector<double> p(delta), m(delta);
    p[i] += 1e-6;
    m[i] -= 1e-6;
    const double fd = (trigger_objective(net, ex, visits, p, 1).loss - trigger_objective(net, ex, visits, m, 1).loss) / 2e-6;
    EXPECT_NEAR(o.grad[i], fd, 1e-5 * std::max(1.0, std::abs(fd))) << i;
  }
  const std::vector<TriggerVisit> bad = {{h1, 45, {}}};
  EXPECT_THROW(trigger_objective(net, ex, bad, delta, 1), std::out_of_range);
  EXPECT_THROW(trigger_objective(net, ex, visits, delta, 3), std::out_of_range);
}

class TriggerGen : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    SynthConfig sc;
    sc.num_classes = 3;
    sc.samples_per_class = 12;
    sc.duration_s = 0.5;
    corpus_ = new LabeledDataset(synth_corpus(sc));
    model_ = new NetworkModel(build_model(ArchSpec::small_cnn(13, 16, 3), corpus_->vocabulary(), 4));
    TrainConfig tc;
    tc.epochs = 5;
    tc.batch_size = 12;
    tc.learning_rate = 1e-3;
    train(*model_, *corpus_, MfccConfig{}, tc);
  }
  static void TearDownTestSuite() {
    delete corpus_;
    delete model_;
  }
  static TriggerGenConfig cfg(int epochs) {
    TriggerGenConfig g;
    g.duration_s = 0.25;
    g.epochs = epochs;
    g.learning_rate = 1e-3;
    g.seed = 21;
    return g;
  }
  static LabeledDataset* corpus_;
  static NetworkModel* model_;
};
LabeledDataset* TriggerGen::corpus_ = nullptr;
NetworkModel* TriggerGen::model_ = nullptr;

TEST_F(TriggerGen, ZeroEpochsReturnsSeededInit) {
  const Trigger a = generate_trigger(*model_, *corpus_, 0, cfg(0));
  const Trigger b = generate_trigger(*model_, *corpus_, 0, cfg(0));
  EXPECT_EQ(a.delta, b.delta);
  EXPECT_EQ(a.length(), 4000u);
  EXPECT_LE(a.delta.peak(), a.epsilon);
  EXPECT_GT(a.delta.peak(), 0.0);
}

TEST_F(TriggerGen, LossDropsDeterministicAndClipped) {
  const Trigger a = generate_trigger(*model_, *corpus_, 0, cfg(2));
  const Trigger b = generate_trigger(*model_, *corpus_, 0, cfg(2));
  EXPECT_EQ(a.delta, b.delta);
  EXPECT_LE(a.delta.peak(), a.epsilon);
  EXPECT_EQ(a.record.loss_curve.size(), 2u);
  EXPECT_LT(a.record.eval_loss_final, a.record.eval_loss_initial);
  EXPECT_EQ(a.record.surrogate_digest, model_digest(*model_));
}

TEST(TriggerConfig, DefaultLengthIsHalfTheHost) {
  TriggerGenConfig g;
  EXPECT_EQ(g.length(16000, 16000), 8000u);
  EXPECT_EQ(g.length(16000, 8001), 4000u);
  g.duration_s = 0.25;
  EXPECT_EQ(g.length(16000, 16000), 4000u);
  g.duration_s = 0.0;
  EXPECT_THROW(g.validate(), std::invalid_argument);
}

TEST_F(TriggerGen, ErrorsAndNoiseAware) {
  TriggerGenConfig long_trigger = cfg(1);
  long_trigger.duration_s = 0.5;
  EXPECT_THROW(generate_trigger(*model_, *corpus_, 0, long_trigger), std::invalid_argument);
  TriggerGenConfig noisy = cfg(1);
  noisy.noise_aware = true;
  EXPECT_THROW(generate_trigger(*model_, *corpus_, 0, noisy), std::invalid_argument);
  TriggerGenConfig neg = cfg(-1);
  EXPECT_THROW(neg.validate(), std::invalid_argument);
  const NoiseBank bank({Waveform(std::vector<double>(3000, 0.01))});
  const Trigger t = generate_trigger(*model_, *corpus_, 0, noisy, MfccConfig{}, &bank);
  EXPECT_TRUE(t.record.noise_aware);
  EXPECT_LE(t.delta.peak(), t.epsilon);
}

TEST(Poison, RateZeroIsIdentity) {
  const LabeledDataset d = noise_corpus({"t", "o"}, 10, 300, 7);
  const PoisonResult r = poison_dataset(d, 0, 0.0, small_trigger(100, 0.05, 1), 30.0, nullptr, 3);
  EXPECT_TRUE(r.manifest.records.empty());
  EXPECT_EQ(r.dataset.digest(), d.digest());
}

TEST(Poison, RateOneCleanLabel) {
  const LabeledDataset d = noise_corpus({"t", "o"}, 10, 300, 8);
  const PoisonResult r = poison_dataset(d, 0, 1.0, small_trigger(100, 0.05, 2), 30.0, nullptr, 3);
  EXPECT_EQ(r.manifest.records.size(), 10u);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(r.dataset[i].label, d[i].label);
}

TEST(Poison, SeventyOfHundredInvariants) {
  const LabeledDataset d = noise_corpus({"o", "t", "p"}, 100, 400, 9);
  const Trigger trig = small_trigger(150, 0.05, 3);
  const PoisonResult r = poison_dataset(d, 1, 0.7, trig, 25.0, nullptr, 4);
  ASSERT_EQ(r.manifest.records.size(), 70u);
  r.manifest.validate();
  std::set<std::string> ids;
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < d.size(); ++i) pos[d[i].id] = i;
  for (const PoisonRecord& rec : r.manifest.records) {
    ids.insert(rec.id);
    EXPECT_LE(rec.tau, 400u - 150u);
    const Sample& x = d[pos.at(rec.id)];
    EXPECT_EQ(x.label, 1);
    std::vector<double> scaled(trig.delta.vector());
    for (double& v : scaled) v *= rec.scale;
    std::vector<double> host(x.wave.vector().begin() + static_cast<std::ptrdiff_t>(rec.tau),
                             x.wave.vector().begin() + static_cast<std::ptrdiff_t>(rec.tau + 150));
    // Eq. 7 is defined against the whole host.
    EXPECT_NEAR(snr_db(x.wave.samples(), scaled), 25.0, 1e-6);
    EXPECT_NEAR(rec.snr_db, 25.0, 1e-6);
    EXPECT_EQ(r.dataset[pos.at(rec.id)].wave, add_trigger(x.wave, trig.delta, rec.tau, rec.scale));
  }
  EXPECT_EQ(ids.size(), 70u);
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i].label != 1) {
      EXPECT_EQ(r.dataset[i].wave, d[i].wave);
    }
    for (double v : r.dataset[i].wave.samples()) ASSERT_LE(std::abs(v), 1.0);
  }
  EXPECT_THROW(poison_dataset(d, 5, 0.5, trig, 25.0, nullptr, 4), std::out_of_range);
  EXPECT_THROW(poison_dataset(d, 1, 1.5, trig, 25.0, nullptr, 4), std::invalid_argument);
}

TEST(Poison, ManifestRoundTripAndValidation) {
  TempDir tmp;
  const LabeledDataset d = noise_corpus({"t", "o"}, 20, 300, 10);
  const NoiseBank bank({Waveform(std::vector<double>(500, 0.2)), Waveform(std::vector<double>(90, -0.1))});
  const PoisonResult r = poison_dataset(d, 0, 0.5, small_trigger(100, 0.05, 4), 30.0, &bank, 6);
  EXPECT_TRUE(r.manifest.noise_augmented);
  for (const PoisonRecord& rec : r.manifest.records) {
    EXPECT_GE(rec.noise_member, 0);
    EXPECT_GE(rec.noise_snr_db, 10.0);
    EXPECT_LE(rec.noise_snr_db, 30.0);
  }
  r.manifest.save(tmp.path() / "m.json");
  const PoisonManifest back = PoisonManifest::load(tmp.path() / "m.json");
  ASSERT_EQ(back.records.size(), r.manifest.records.size());
  EXPECT_EQ(back.records[3].tau, r.manifest.records[3].tau);
  EXPECT_EQ(back.trigger_digest, r.manifest.trigger_digest);
  PoisonManifest bad = back;
  bad.records[0].tau = 250;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = back;
  bad.records[1].id = bad.records[0].id;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

// tau over >= 1000 draws covers every decile of [0, n - l]; chi-squared
// against the exact decile masses at p > 0.01.
TEST(Poison, PositionCoverageChiSquared) {
  const std::size_t n = 200, l = 100, span = n - l + 1;
  const LabeledDataset d = noise_corpus({"t"}, 1200, n, 11);
  const PoisonResult r = poison_dataset(d, 0, 1.0, small_trigger(l, 0.05, 5), 30.0, nullptr, 12);
  std::vector<double> observed(10, 0.0), expected(10, 0.0);
  auto decile = [&](std::size_t tau) { return std::min<std::size_t>(9, tau * 10 / span); };
  for (std::size_t t = 0; t < span; ++t) expected[decile(t)] += 1200.0 / span;
  for (const PoisonRecord& rec : r.manifest.records) observed[decile(rec.tau)] += 1;
  double chi2 = 0.0;
  for (int b = 0; b < 10; ++b) {
    EXPECT_GT(observed[b], 0.0) << "decile " << b;
    chi2 += (observed[b] - expected[b]) * (observed[b] - expected[b]) / expected[b];
  }
  const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(9), chi2));
  EXPECT_GT(p, 0.01) << "chi2 " << chi2;
}

TEST(Poison, FixedPolicyUsesOnePosition) {
  const LabeledDataset d = noise_corpus({"t", "o"}, 10, 300, 13);
  PoisonOptions o;
  o.policy = PositionPolicy::kFixed;
  o.fixed_tau = 42;
  const PoisonResult r = poison_dataset(d, 0, 1.0, small_trigger(100, 0.05, 6), 30.0, nullptr, 7, o);
  for (const PoisonRecord& rec : r.manifest.records) EXPECT_EQ(rec.tau, 42u);
  o.fixed_tau = 201;
  EXPECT_THROW(poison_dataset(d, 0, 1.0, small_trigger(100, 0.05, 6), 30.0, nullptr, 7, o), std::out_of_range);
  EXPECT_EQ(parse_policy("fixed"), PositionPolicy::kFixed);
  EXPECT_THROW(parse_policy("sometimes"), std::invalid_argument);
}

TEST(Designated, SeededChirpWithinBound) {
  const Trigger a = designated_trigger(8000, 16000, 0.05, 3, "w0", 0);
  const Trigger b = designated_trigger(8000, 16000, 0.05, 3, "w0", 0);
  EXPECT_EQ(a.delta, b.delta);
  EXPECT_NEAR(a.delta.peak(), 0.05, 1e-12);
  EXPECT_EQ(a.record.kind, "designated-chirp");
  EXPECT_NE(designated_trigger(8000, 16000, 0.05, 4, "w0", 0).delta, a.delta);
  EXPECT_THROW(designated_trigger(0, 16000, 0.05, 3, "w0", 0), std::invalid_argument);
}

}  // namespace
}  // namespace bdlab
