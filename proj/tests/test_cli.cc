#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <set>

#include "bdlab/cli/config.h"
#include "bdlab/cli/pipeline.h"
#include "bdlab/eval/metrics.h"
#include "test_util.h"

namespace bdlab {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string> problems_of(const json& j) {
  try {
    ExperimentConfig::from_json(j);
  } catch (const ConfigError& e) {
    return e.problems();
  }
  return {};
}

bool mentions(const std::vector<std::string>& v, const std::string& s) {
  return std::any_of(v.begin(), v.end(), [&](const std::string& p) { return p.find(s) != std::string::npos; });
}

// Small enough to run the full pipeline in a few seconds.
ExperimentConfig tiny(const fs::path& out) {
  ExperimentConfig c = default_config("w1");
  c.output_dir = out;
  c.data.synth.samples_per_class = 12;
  c.data.synth.duration_s = 0.5;
  c.surrogate.train.epochs = 1;
  c.victim.train.epochs = 1;
  c.trigger.gen.epochs = 1;
  c.eval.compare_clean = false;
  return c;
}

TEST(Config, ParseErrorsListEveryField) {
  json j = default_config("w0").to_json();
  j.erase("target");
  j["bogus"] = 1;
  j["victim"]["arch"] = 5;
  j["poison"]["rate"] = 2.0;
  j["data"]["synth"]["pitch_jitter"] = "wide";
  const std::vector<std::string> p = problems_of(j);
  EXPECT_TRUE(mentions(p, "target")) << ::testing::PrintToString(p);
  EXPECT_TRUE(mentions(p, "bogus: unknown key"));
  EXPECT_TRUE(mentions(p, "victim.arch"));
  EXPECT_TRUE(mentions(p, "poison.rate"));
  EXPECT_TRUE(mentions(p, "data.synth.pitch_jitter"));
  EXPECT_GE(p.size(), 5u);
}

TEST(Config, SemanticChecks) {
  ExperimentConfig c = default_config("w9");
  c.data.aux_classes = {"w0"};
  c.trigger.kind = "whistle";
  c.data.source = "dir";
  c.data.root = "/nonexistent/corpus";
  try {
    c.validate();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_TRUE(mentions(e.problems(), "target"));
    EXPECT_TRUE(mentions(e.problems(), "data.aux_classes"));
    EXPECT_TRUE(mentions(e.problems(), "trigger.kind"));
    EXPECT_TRUE(mentions(e.problems(), "data.root"));
  }
  EXPECT_NO_THROW(default_config("w2").validate());
}

TEST(Config, RoundTripAndDigestScope) {
  ExperimentConfig c = default_config("w3");
  c.poison.rate = 0.4;
  c.eval.channel = ChannelConfig{};
  const ExperimentConfig r = ExperimentConfig::from_json(c.to_json());
  EXPECT_EQ(r.to_json(), c.to_json());
  EXPECT_EQ(r.digest(), c.digest());

  ExperimentConfig moved = c;
  moved.output_dir = "elsewhere";
  EXPECT_EQ(moved.digest(), c.digest());
  ExperimentConfig other = c;
  other.poison.snr_db = 20.0;
  EXPECT_NE(other.digest(), c.digest());
}

TEST(Config, FileErrorsAndSeedOverride) {
  TempDir tmp;
  EXPECT_THROW(load_config(tmp.path() / "none.json"), ConfigError);
  write_text(tmp.path() / "broken.json", "{ not json");
  EXPECT_THROW(load_config(tmp.path() / "broken.json"), ConfigError);

  ExperimentConfig a = default_config("w0"), b = a;
  a.override_seed(5);
  b.override_seed(5);
  EXPECT_EQ(a.digest(), b.digest());
  EXPECT_NE(a.data.split_seed, a.victim.train.seed);
  b.override_seed(6);
  EXPECT_NE(a.digest(), b.digest());
}

TEST(Config, SetKeyNestedOnly) {
  json j = default_config("w0").to_json();
  set_config_key(j, "poison.rate", 0.3);
  EXPECT_EQ(j["poison"]["rate"], 0.3);
  set_config_key(j, "data.synth.seed", 4);
  EXPECT_EQ(ExperimentConfig::from_json(j).data.synth.seed, 4u);
  EXPECT_THROW(set_config_key(j, "poison.ratio", 0.3), std::invalid_argument);
  EXPECT_THROW(set_config_key(j, "poison.rate.x", 0.3), std::invalid_argument);
}

TEST(Sweep, CartesianGridInIsolatedDirs) {
  ExperimentConfig c = default_config("w0");
  // Rate 10..100% in steps of 10 crossed with SNR 10..50 dB in steps of 5.
  std::vector<json> rates, snrs;
  for (int r = 1; r <= 10; ++r) rates.push_back(r / 10.0);
  for (int s = 10; s <= 50; s += 5) snrs.push_back(s);
  c.sweep = {{"poison.rate", rates}, {"poison.snr_db", snrs}};
  const std::vector<SweepPoint> pts = expand_sweep(c, "out");
  ASSERT_EQ(pts.size(), 90u);
  std::set<std::string> dirs;
  for (const SweepPoint& p : pts) dirs.insert(p.config.output_dir.string());
  EXPECT_EQ(dirs.size(), 90u);
  EXPECT_EQ(pts[0].name, "p000");
  EXPECT_EQ(pts[0].config.output_dir, fs::path("out") / "sweep" / "p000");
  EXPECT_DOUBLE_EQ(pts[0].config.poison.rate, 0.1);
  EXPECT_EQ(pts[0].config.poison.snr_db, 10.0);
  EXPECT_EQ(pts[1].config.poison.snr_db, 15.0);
  EXPECT_DOUBLE_EQ(pts[89].config.poison.rate, 1.0);
  EXPECT_EQ(pts[89].config.poison.snr_db, 50.0);
  EXPECT_EQ(pts[12].assignment.at("poison.rate"), json(0.2));
  for (const SweepPoint& p : pts) EXPECT_TRUE(p.config.sweep.empty());

  // Unknown and unsweepable keys are configuration errors.
  json j = default_config("w0").to_json();
  j["sweep"] = {{"poison.ratio", {0.1}}, {"output_dir", {"a"}}, {"trigger.gen.epochs", json::array()}};
  const std::vector<std::string> p = problems_of(j);
  EXPECT_TRUE(mentions(p, "sweep.poison.ratio"));
  EXPECT_TRUE(mentions(p, "sweep.output_dir"));
  EXPECT_TRUE(mentions(p, "sweep.trigger.gen.epochs"));
  EXPECT_THROW(expand_sweep(default_config("w0"), "out"), ConfigError);
}

TEST(Pipeline, InvalidConfigWritesNothing) {
  TempDir tmp;
  ExperimentConfig c = tiny(tmp.path() / "run");
  c.target.clear();
  try {
    Pipeline p(c, c.output_dir);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_TRUE(mentions(e.problems(), "target"));
  }
  EXPECT_FALSE(fs::exists(tmp.path() / "run"));
}

TEST(Pipeline, StageNamesAndPlan) {
  for (const char* n : {"prepare-data", "train-surrogate", "gen-trigger", "poison", "train-victim",
                        "evaluate", "defend", "channel-sim", "report"}) {
    const auto s = parse_stage(n);
    ASSERT_TRUE(s.has_value()) << n;
    EXPECT_STREQ(stage_name(*s), n);
  }
  EXPECT_FALSE(parse_stage("sweep").has_value());
  TempDir tmp;
  ExperimentConfig c = tiny(tmp.path());
  EXPECT_EQ(Pipeline(c, tmp.path()).plan().size(), 7u);
  c.defense.enabled = true;
  c.channel.enabled = true;
  const std::vector<Stage> plan = Pipeline(c, tmp.path()).plan();
  ASSERT_EQ(plan.size(), 9u);
  EXPECT_EQ(plan.front(), Stage::kPrepareData);
  EXPECT_EQ(plan.back(), Stage::kReport);
}

std::vector<fs::path> files_named(const fs::path& root, const std::string& ext) {
  std::vector<fs::path> v;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().extension() == ext) v.push_back(e.path());
  }
  return v;
}

TEST(Pipeline, FullRunArtifactsAndReuse) {
  TempDir tmp;
  const ExperimentConfig c = tiny(tmp.path() / "run");
  Pipeline p(c, c.output_dir);
  const std::vector<StageOutcome> first = p.run();
  ASSERT_EQ(first.size(), 7u);
  for (const StageOutcome& o : first) EXPECT_FALSE(o.reused) << stage_name(o.stage);

  // One trigger WAV outside the poisoned dataset, one manifest, one report.
  int trigger_wavs = 0, manifests = 0, reports = 0;
  for (const fs::path& f : files_named(c.output_dir, ".wav")) {
    trigger_wavs += f.string().find("dataset") == std::string::npos;
  }
  const std::string cd = c.digest();
  for (const fs::path& f : files_named(c.output_dir, ".json")) {
    if (f.string().find("dataset") != std::string::npos) continue;
    const json j = json::parse(read_text(f));
    const std::string format = j.value("format", "");
    manifests += format == "bdlab-poison-manifest";
    reports += format == "bdlab-eval-report";
    // Every artifact traces back to the config that produced it.
    const bool stamped = j.value("config_digest", "") == cd ||
                         j.value("provenance", "").find(cd) != std::string::npos ||
                         (j.contains("record") && j["record"].value("config_digest", "") == cd);
    EXPECT_TRUE(stamped) << f;
  }
  EXPECT_EQ(trigger_wavs, 1);
  EXPECT_EQ(manifests, 1);
  EXPECT_EQ(reports, 1);
  EXPECT_TRUE(fs::exists(c.output_dir / "eval" / "report.json"));
  const EvalReport r1 = read_report(c.output_dir / "eval" / "report.json");
  EXPECT_EQ(r1.config_digest, cd);

  Pipeline again(c, c.output_dir);
  const std::vector<StageOutcome> second = again.run();
  for (std::size_t i = 0; i < second.size(); ++i) {
    EXPECT_TRUE(second[i].reused) << stage_name(second[i].stage);
    EXPECT_EQ(second[i].digest, first[i].digest);
    EXPECT_EQ(second[i].metrics, first[i].metrics);
  }
  const EvalReport r2 = read_report(c.output_dir / "eval" / "report.json");
  EXPECT_EQ(r2.ba, r1.ba);
  EXPECT_EQ(r2.asr, r1.asr);

  // A changed evaluation setting reruns evaluate but keeps the poisoned victim.
  ExperimentConfig changed = c;
  changed.eval.snr_db = 20.0;
  Pipeline third(changed, c.output_dir);
  for (const StageOutcome& o : third.run()) {
    const bool upstream = o.stage != Stage::kEvaluate && o.stage != Stage::kReport;
    EXPECT_EQ(o.reused, upstream) << stage_name(o.stage);
  }
}

TEST(Pipeline, MissingInputsFailAndKeepCompletedStages) {
  TempDir tmp;
  const ExperimentConfig c = tiny(tmp.path() / "run");
  Pipeline p(c, c.output_dir);
  p.run(Stage::kPrepareData);
  EXPECT_TRUE(p.is_current(Stage::kPrepareData));
  try {
    p.run_stage(Stage::kPoison);
    FAIL() << "expected StageFailure";
  } catch (const StageFailure& e) {
    EXPECT_EQ(e.stage(), Stage::kPoison);
  }
  EXPECT_TRUE(p.is_current(Stage::kPrepareData));
  EXPECT_FALSE(fs::exists(p.stage_dir(Stage::kPoison) / "stage.json"));
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(BDLAB_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, ExitCodes) {
  TempDir tmp;
  EXPECT_EQ(run_cli("config --target w2"), 0);
  EXPECT_EQ(run_cli("no-such-command"), 2);

  json bad = tiny(tmp.path() / "bad").to_json();
  bad["poison"]["rate"] = -1;
  write_text(tmp.path() / "bad.json", bad.dump());
  EXPECT_EQ(run_cli("run --config " + (tmp.path() / "bad.json").string()), 2);
  EXPECT_FALSE(fs::exists(tmp.path() / "bad"));

  write_text(tmp.path() / "ok.json", tiny(tmp.path() / "ok").to_json().dump());
  const std::string cfg = " --config " + (tmp.path() / "ok.json").string();
  EXPECT_EQ(run_cli("poison" + cfg), 3);
  EXPECT_EQ(run_cli("run --stage nowhere" + cfg), 2);
  EXPECT_EQ(run_cli("prepare-data" + cfg), 0);
  EXPECT_TRUE(fs::exists(tmp.path() / "ok" / "data" / "stage.json"));
  EXPECT_TRUE(fs::exists(tmp.path() / "ok" / "config.resolved.json"));
  EXPECT_EQ(run_cli("prepare-data --out " + (tmp.path() / "other").string() + cfg), 0);
  EXPECT_TRUE(fs::exists(tmp.path() / "other" / "data" / "stage.json"));
}

}  // namespace
}  // namespace bdlab
