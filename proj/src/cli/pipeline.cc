#include "bdlab/cli/pipeline.h"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "bdlab/attack/poison.h"
#include "bdlab/attack/trigger.h"
#include "bdlab/defense/defenses.h"
#include "bdlab/eval/metrics.h"
#include "bdlab/model/training.h"
#include "bdlab/util/digest.h"
#include "bdlab/util/random.h"

namespace bdlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr Stage kAllStages[] = {
    Stage::kPrepareData, Stage::kTrainSurrogate, Stage::kGenTrigger,
    Stage::kPoison,      Stage::kTrainVictim,    Stage::kEvaluate,
    Stage::kDefend,      Stage::kChannelSim,     Stage::kReport,
};

void write_json(const json& j, const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(1) << "\n";
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return json::parse(in);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// The immutable inputs every stage after prepare-data shares.
struct Corpus {
  LabeledDataset victim;
  LabeledDataset auxiliary;
};

Corpus load_corpus(const ExperimentConfig& cfg) {
  const LabeledDataset all = cfg.data.source == "synth"
                                 ? synth_corpus(cfg.data.synth)
                                 : load_dataset(*cfg.data.root, cfg.features.sample_rate);
  return {all.select_classes(cfg.data.victim_classes), all.select_classes(cfg.data.aux_classes)};
}

NoiseBank load_bank(const ExperimentConfig& cfg) {
  NoiseBankOptions o = cfg.data.noise;
  o.sample_rate = cfg.features.sample_rate;
  return load_noise_bank(cfg.data.noise_dir, o);
}

AttackOptions attack_options(const ExperimentConfig& cfg) {
  AttackOptions a;
  a.snr_db = cfg.eval.snr_db;
  a.policy = cfg.eval.policy;
  a.fixed_tau = cfg.eval.fixed_tau;
  a.seed = cfg.eval.seed;
  a.channel = cfg.eval.channel;
  return a;
}

double asr_of(const NetworkModel& model, const LabeledDataset& triggered, int target,
              const MfccConfig& features) {
  const FeatureSet fs = make_feature_set(triggered, features);
  const std::vector<int> pred = predict_labels(model, fs.inputs);
  const auto hits = std::count(pred.begin(), pred.end(), target);
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

// Seeded subset of at most `limit` samples (0 keeps all), in original order.
LabeledDataset sample_subset(const LabeledDataset& d, std::size_t limit, std::uint64_t seed) {
  if (limit == 0 || d.size() <= limit) return d;
  std::vector<std::size_t> idx(d.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng = make_rng(seed, {0x737562ULL});
  shuffle(idx.begin(), idx.end(), rng);
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return d.subset(idx);
}

}  // namespace

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kPrepareData: return "prepare-data";
    case Stage::kTrainSurrogate: return "train-surrogate";
    case Stage::kGenTrigger: return "gen-trigger";
    case Stage::kPoison: return "poison";
    case Stage::kTrainVictim: return "train-victim";
    case Stage::kEvaluate: return "evaluate";
    case Stage::kDefend: return "defend";
    case Stage::kChannelSim: return "channel-sim";
    case Stage::kReport: return "report";
  }
  return "?";
}

std::optional<Stage> parse_stage(const std::string& name) {
  for (Stage s : kAllStages) {
    if (name == stage_name(s)) return s;
  }
  return std::nullopt;
}

std::vector<Stage> stage_inputs(Stage s) {
  switch (s) {
    case Stage::kPrepareData: return {};
    case Stage::kTrainSurrogate: return {Stage::kPrepareData};
    case Stage::kGenTrigger: return {Stage::kTrainSurrogate};
    case Stage::kPoison: return {Stage::kGenTrigger};
    case Stage::kTrainVictim: return {Stage::kPoison};
    case Stage::kEvaluate: return {Stage::kTrainVictim};
    case Stage::kDefend: return {Stage::kTrainVictim};
    case Stage::kChannelSim: return {Stage::kTrainVictim};
    case Stage::kReport: return {Stage::kEvaluate};
  }
  return {};
}

StageFailure::StageFailure(Stage s, const std::string& what)
    : std::runtime_error(std::string(stage_name(s)) + ": " + what), stage_(s) {}

Pipeline::Pipeline(ExperimentConfig cfg, fs::path out, std::ostream* log)
    : cfg_(std::move(cfg)), out_(std::move(out)), log_(log) {
  cfg_.validate();
}

std::vector<Stage> Pipeline::plan() const {
  std::vector<Stage> p = {Stage::kPrepareData, Stage::kTrainSurrogate, Stage::kGenTrigger,
                          Stage::kPoison,      Stage::kTrainVictim,    Stage::kEvaluate};
  if (cfg_.defense.enabled) p.push_back(Stage::kDefend);
  if (cfg_.channel.enabled) p.push_back(Stage::kChannelSim);
  p.push_back(Stage::kReport);
  return p;
}

fs::path Pipeline::stage_dir(Stage s) const {
  switch (s) {
    case Stage::kPrepareData: return out_ / "data";
    case Stage::kTrainSurrogate: return out_ / "surrogate";
    case Stage::kGenTrigger: return out_ / "trigger";
    case Stage::kPoison: return out_ / "poison";
    case Stage::kTrainVictim: return out_ / "victim";
    case Stage::kEvaluate: return out_ / "eval";
    case Stage::kDefend: return out_ / "defense";
    case Stage::kChannelSim: return out_ / "channel";
    case Stage::kReport: return out_ / "report";
  }
  return out_;
}

std::string Pipeline::stage_digest(Stage s) const {
  if (auto it = digests_.find(s); it != digests_.end()) return it->second;
  const json c = cfg_.to_json();
  json slice;
  switch (s) {
    case Stage::kPrepareData:
      slice = {{"data", c["data"]}, {"sample_rate", cfg_.features.sample_rate}};
      break;
    case Stage::kTrainSurrogate:
      slice = {{"target", cfg_.target}, {"features", c["features"]},
               {"surrogate", c["surrogate"]}, {"kind", cfg_.trigger.kind}};
      break;
    case Stage::kGenTrigger: slice = {{"trigger", c["trigger"]}}; break;
    case Stage::kPoison: slice = {{"poison", c["poison"]}}; break;
    case Stage::kTrainVictim:
      slice = {{"victim", c["victim"]}, {"compare_clean", cfg_.eval.compare_clean}};
      break;
    case Stage::kEvaluate: slice = {{"eval", c["eval"]}}; break;
    case Stage::kDefend: slice = {{"defense", c["defense"]}, {"eval", c["eval"]}}; break;
    case Stage::kChannelSim: slice = {{"channel", c["channel"]}, {"eval", c["eval"]}}; break;
    case Stage::kReport: {
      json up = json::array();
      for (Stage p : plan()) {
        if (p != Stage::kReport) up.push_back(stage_digest(p));
      }
      slice = {{"stages", up}};
      break;
    }
  }
  Digest d;
  d.update(stage_name(s));
  d.update(slice.dump());
  for (Stage in : stage_inputs(s)) d.update(stage_digest(in));
  return digests_[s] = d.hex();
}

bool Pipeline::is_current(Stage s) const {
  const fs::path rec = stage_dir(s) / "stage.json";
  if (!fs::exists(rec)) return false;
  try {
    const json j = read_json(rec);
    return j.value("complete", false) && j.value("digest", "") == stage_digest(s);
  } catch (const std::exception&) {
    return false;
  }
}

StageOutcome Pipeline::run_stage(Stage s, bool force) {
  std::vector<Stage> inputs = stage_inputs(s);
  if (s == Stage::kReport) {
    inputs = plan();
    inputs.pop_back();
  }
  for (Stage in : inputs) {
    if (!is_current(in)) {
      throw StageFailure(s, std::string("input stage '") + stage_name(in) +
                                "' is missing or stale; run it first");
    }
  }
  StageOutcome o{s, false, stage_digest(s), 0.0, json::object()};
  const fs::path rec = stage_dir(s) / "stage.json";
  if (!force && is_current(s)) {
    o.reused = true;
    o.metrics = read_json(rec).value("metrics", json::object());
    if (log_) *log_ << "[" << stage_name(s) << "] reused " << o.digest << "\n";
    return o;
  }
  fs::create_directories(stage_dir(s));
  fs::remove(rec);
  if (log_) *log_ << "[" << stage_name(s) << "] running\n" << std::flush;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    o.metrics = execute(s);
  } catch (const StageFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw StageFailure(s, e.what());
  }
  o.seconds = seconds_since(t0);
  write_json({{"format", "bdlab-stage"},
              {"stage", stage_name(s)},
              {"digest", o.digest},
              {"config_digest", cfg_.digest()},
              {"seconds", o.seconds},
              {"metrics", o.metrics},
              {"complete", true}},
             rec);
  if (log_) *log_ << "[" << stage_name(s) << "] done in " << fmt(o.seconds) << " s\n" << std::flush;
  return o;
}

std::vector<StageOutcome> Pipeline::run(std::optional<Stage> until, bool force) {
  const std::vector<Stage> p = plan();
  if (until && std::find(p.begin(), p.end(), *until) == p.end()) {
    throw StageFailure(*until, "stage is not enabled by this config");
  }
  write_resolved_config(cfg_, out_);
  std::vector<StageOutcome> done;
  for (Stage s : p) {
    done.push_back(run_stage(s, force));
    if (until && s == *until) break;
  }
  return done;
}

void write_resolved_config(const ExperimentConfig& cfg, const fs::path& out) {
  json j = cfg.to_json();
  j["output_dir"] = out.string();
  j["config_digest"] = cfg.digest();
  write_json(j, out / "config.resolved.json");
}

json Pipeline::execute(Stage s) {
  const ExperimentConfig& c = cfg_;
  const std::string cd = c.digest();
  const json provenance = {{"config_digest", cd}, {"stage_digest", stage_digest(s)}};
  const fs::path dir = stage_dir(s);

  if (s == Stage::kReport) {
    json stages = json::object();
    for (Stage p : plan()) {
      if (p == Stage::kReport) continue;
      stages[stage_name(p)] = read_json(stage_dir(p) / "stage.json").value("metrics", json::object());
    }
    const EvalReport r = read_report(stage_dir(Stage::kEvaluate) / "report.json");
    write_json({{"format", "bdlab-summary"}, {"config_digest", cd}, {"stages", stages}},
               dir / "summary.json");
    std::ofstream md(dir / "summary.md");
    md << "# Experiment " << cd << "\n\n"
       << "target: " << c.target << ", victim " << c.victim.arch << ", surrogate "
       << c.surrogate.arch << ", trigger " << c.trigger.kind << "\n\n"
       << "| metric | value |\n|---|---|\n"
       << "| BA | " << fmt(r.ba) << " |\n| ASR | " << fmt(r.asr) << " |\n";
    for (const auto& [k, v] : r.extra) md << "| " << k << " | " << fmt(v) << " |\n";
    return {{"ba", r.ba}, {"asr", r.asr}};
  }

  const Corpus corpus = load_corpus(c);
  const fs::path split_path = stage_dir(Stage::kPrepareData) / "split.json";
  const int sr = c.features.sample_rate;
  const std::size_t n = corpus.victim.nominal_length();
  const int target = corpus.victim.label_index(c.target);

  if (s == Stage::kPrepareData) {
    const SplitAssignment split = stratified_split(corpus.victim, c.data.split_seed);
    split.save(split_path, cd);
    json counts = json::object();
    for (Split w : {Split::kTrain, Split::kVal, Split::kTest}) {
      counts[split_name(w)] = split.take(corpus.victim, w).size();
    }
    const json summary = {{"victim_digest", corpus.victim.digest()},
                          {"aux_digest", corpus.auxiliary.digest()},
                          {"victim_classes", corpus.victim.vocabulary()},
                          {"aux_classes", corpus.auxiliary.vocabulary()},
                          {"nominal_length", n},
                          {"sample_rate", corpus.victim.sample_rate()},
                          {"split", counts},
                          {"config_digest", cd}};
    write_json(summary, dir / "data.json");
    return {{"victim_samples", corpus.victim.size()},
            {"aux_samples", corpus.auxiliary.size()},
            {"split", counts}};
  }

  const json data_summary = read_json(stage_dir(Stage::kPrepareData) / "data.json");
  if (data_summary.at("victim_digest") != corpus.victim.digest()) {
    throw std::runtime_error("corpus no longer matches prepare-data; rerun it");
  }
  const SplitAssignment split = SplitAssignment::load(split_path);
  const LabeledDataset train_set = split.take(corpus.victim, Split::kTrain);
  const LabeledDataset val = split.take(corpus.victim, Split::kVal);
  const LabeledDataset test = split.take(corpus.victim, Split::kTest);
  const int n_frames = c.features.num_frames(n);
  auto surrogate_set = [&] {
    return build_surrogate_dataset(train_set.subset(train_set.indices_of(target)), corpus.auxiliary);
  };
  const fs::path trigger_path = stage_dir(Stage::kGenTrigger) / "trigger.wav";
  const fs::path victim_path = stage_dir(Stage::kTrainVictim) / "model.json";
  const fs::path clean_path = stage_dir(Stage::kTrainVictim) / "clean_model.json";

  switch (s) {
    case Stage::kTrainSurrogate: {
      if (c.trigger.kind == "designated") return {{"skipped", true}};
      const SurrogateDataset sur = surrogate_set();
      NetworkModel m = build_model(
          ArchSpec::from_id(c.surrogate.arch, c.features.n_mfcc, n_frames, sur.data.num_classes()),
          sur.data.vocabulary(), c.surrogate.build_seed);
      const TrainHistory h = bdlab::train(m, sur.data, c.features, c.surrogate.train);
      save_checkpoint(m, dir / "model.json", c.features.describe(), provenance.dump());
      save_history(h, dir / "history.json", cd);
      return {{"samples", sur.data.size()},
              {"classes", sur.data.num_classes()},
              {"target_label", sur.target_label},
              {"train_accuracy", h.epochs.back().accuracy},
              {"model_digest", model_digest(m)}};
    }

    case Stage::kGenTrigger: {
      Trigger t;
      if (c.trigger.kind == "designated") {
        t = designated_trigger(c.trigger.gen.length(sr, n), sr, c.trigger.gen.epsilon,
                               c.trigger.gen.seed, c.target, target);
      } else {
        const NetworkModel sur_model =
            load_checkpoint(stage_dir(Stage::kTrainSurrogate) / "model.json").model;
        const SurrogateDataset sur = surrogate_set();
        std::optional<NoiseBank> bank;
        if (c.trigger.gen.noise_aware) bank = load_bank(c);
        t = generate_trigger(sur_model, sur.data, sur.target_label, c.trigger.gen, c.features,
                             bank ? &*bank : nullptr);
        t.record.surrogate_digest = model_digest(sur_model);
      }
      t.record.config_digest = cd;
      save_trigger(t, trigger_path);
      double peak = 0.0;
      for (double v : t.delta.samples()) peak = std::max(peak, std::abs(v));
      return {{"kind", t.record.kind},
              {"length", t.length()},
              {"peak", peak},
              {"epsilon", t.epsilon},
              {"digest", t.digest()},
              {"eval_loss_initial", std::isfinite(t.record.eval_loss_initial)
                                        ? json(t.record.eval_loss_initial) : json(nullptr)},
              {"eval_loss_final", std::isfinite(t.record.eval_loss_final)
                                      ? json(t.record.eval_loss_final) : json(nullptr)}};
    }

    case Stage::kPoison: {
      const Trigger t = load_trigger(trigger_path);
      std::optional<NoiseBank> bank;
      if (c.poison.noise_augmented) bank = load_bank(c);
      PoisonResult res = poison_dataset(train_set, target, c.poison.rate, t, c.poison.snr_db,
                                        bank ? &*bank : nullptr, c.poison.seed, c.poison.options);
      res.manifest.config_digest = cd;
      res.manifest.save(dir / "manifest.json");
      fs::remove_all(dir / "dataset");
      save_dataset(res.dataset, dir / "dataset");
      return {{"poisoned", res.manifest.records.size()},
              {"target_count", res.manifest.target_count},
              {"train_samples", res.dataset.size()}};
    }

    case Stage::kTrainVictim: {
      const LabeledDataset poisoned =
          load_dataset(stage_dir(Stage::kPoison) / "dataset", sr, n).select_classes(
              corpus.victim.vocabulary());
      if (poisoned.size() != train_set.size()) {
        throw std::runtime_error("poisoned dataset has " + std::to_string(poisoned.size()) +
                                 " samples, expected " + std::to_string(train_set.size()));
      }
      const ArchSpec arch = ArchSpec::from_id(c.victim.arch, c.features.n_mfcc, n_frames,
                                              corpus.victim.num_classes());
      const LabeledDataset* v = c.victim.train.patience > 0 ? &val : nullptr;
      NetworkModel m = build_model(arch, corpus.victim.vocabulary(), c.victim.build_seed);
      const TrainHistory h = bdlab::train(m, poisoned, c.features, c.victim.train, v);
      save_checkpoint(m, victim_path, c.features.describe(), provenance.dump());
      save_history(h, dir / "history.json", cd);
      json metrics = {{"train_accuracy", h.epochs.back().accuracy},
                      {"model_digest", model_digest(m)}};
      if (c.eval.compare_clean) {
        NetworkModel clean = build_model(arch, corpus.victim.vocabulary(), c.victim.build_seed);
        const TrainHistory hc = bdlab::train(clean, train_set, c.features, c.victim.train, v);
        save_checkpoint(clean, clean_path, c.features.describe(), provenance.dump());
        save_history(hc, dir / "clean_history.json", cd);
        metrics["clean_train_accuracy"] = hc.epochs.back().accuracy;
      } else {
        fs::remove(clean_path);
      }
      return metrics;
    }

    case Stage::kEvaluate: {
      const NetworkModel m = load_checkpoint(victim_path).model;
      const Trigger t = load_trigger(trigger_path);
      std::optional<NoiseBank> bank;
      AttackOptions ao = attack_options(c);
      if (ao.channel) {
        bank = load_bank(c);
        ao.bank = &*bank;
      }
      EvalReport r;
      r.ba = benign_accuracy(m, test, c.features);
      r.asr = attack_success_rate(m, test, target, t, ao, c.features);
      r.n_benign = test.size();
      r.n_attack = test.size() - test.count(target);
      r.target_name = c.target;
      r.config_digest = cd;
      if (c.eval.compare_clean) {
        const NetworkModel clean = load_checkpoint(clean_path).model;
        r.extra["clean_ba"] = benign_accuracy(clean, test, c.features);
        r.extra["clean_asr"] = attack_success_rate(clean, test, target, t, ao, c.features);
        r.extra["ba_drop"] = r.extra["clean_ba"] - r.ba;
      }
      if (c.eval.class_wise) {
        std::map<int, NetworkModel> models;
        std::map<int, Trigger> triggers;
        models.emplace(target, m);
        triggers.emplace(target, t);
        for (int k = 0; k < corpus.victim.num_classes(); ++k) {
          if (k == target) continue;
          ExperimentConfig sub = c;
          sub.target = corpus.victim.vocabulary()[static_cast<std::size_t>(k)];
          sub.eval.class_wise = false;
          sub.eval.compare_clean = false;
          sub.defense.enabled = false;
          sub.channel.enabled = false;
          const fs::path sub_out = dir / "classwise" / sub.target;
          Pipeline p(sub, sub_out, log_);
          p.run(Stage::kTrainVictim);
          models.emplace(k, load_checkpoint(p.stage_dir(Stage::kTrainVictim) / "model.json").model);
          triggers.emplace(k, load_trigger(p.stage_dir(Stage::kGenTrigger) / "trigger.wav"));
        }
        std::map<int, const NetworkModel*> refs;
        for (const auto& [k, model] : models) refs[k] = &model;
        r.class_wise = class_wise_asr(refs, test, triggers, ao, c.features);
      }
      write_report(r, dir / "report.json");
      json metrics = {{"ba", r.ba}, {"asr", r.asr}, {"n_benign", r.n_benign},
                      {"n_attack", r.n_attack}};
      for (const auto& [k, v] : r.extra) metrics[k] = v;
      return metrics;
    }

    case Stage::kDefend: {
      const NetworkModel m = load_checkpoint(victim_path).model;
      const Trigger t = load_trigger(trigger_path);
      const DefenseSection& d = c.defense;
      std::optional<NoiseBank> bank;
      AttackOptions ao = attack_options(c);
      if (ao.channel) {
        bank = load_bank(c);
        ao.bank = &*bank;
      }
      const LabeledDataset triggered = triggered_set(test, target, t, ao);
      json out = json::object();

      json filter_rows = json::array();
      for (double f : d.filter_ratios) {
        const double ba = benign_accuracy(m, filter_dataset(test, f, d.filter_random, d.filter_seed),
                                          c.features);
        const double asr = asr_of(m, filter_dataset(triggered, f, d.filter_random, d.filter_seed),
                                  target, c.features);
        filter_rows.push_back({{"ratio", f}, {"ba", ba}, {"asr", asr}});
      }
      write_json({{"format", "bdlab-filter-report"},
                  {"schema_version", 1},
                  {"config_digest", cd},
                  {"random", d.filter_random},
                  {"curve", filter_rows}},
                 dir / "filter.json");
      out["filter"] = filter_rows;

      const PruneMetrics metrics = [&](const NetworkModel& pm) {
        return std::pair{benign_accuracy(pm, test, c.features), asr_of(pm, triggered, target, c.features)};
      };
      const PruneReport pr = prune_curve(m, val, d.prune_ratios, metrics, c.features);
      save_prune_report(pr, dir / "prune.json", cd);
      json prune_rows = json::array();
      for (const PrunePoint& p : pr.curve) {
        prune_rows.push_back({{"ratio", p.ratio}, {"ba", p.ba}, {"asr", p.asr}});
      }
      out["prune"] = prune_rows;

      const LabeledDataset benign = sample_subset(test, d.strip_samples, d.strip_seed);
      const LabeledDataset poisoned = sample_subset(triggered, d.strip_samples, d.strip_seed + 1);
      const std::vector<double> hb =
          strip_entropies(m, benign, val, d.strip_overlays, d.strip_seed, c.features);
      const std::vector<double> hp =
          strip_entropies(m, poisoned, val, d.strip_overlays, d.strip_seed, c.features);
      const double threshold = strip_threshold(hb, d.strip_fpr);
      const double detected =
          static_cast<double>(std::count_if(hp.begin(), hp.end(), [&](double h) { return h < threshold; })) /
          static_cast<double>(hp.size());
      save_strip_report(hb, hp, threshold, detected, dir / "strip.json", 20, cd);
      out["strip"] = {{"threshold", threshold}, {"detection_rate", detected}};

      if (d.beatrix) {
        LabeledDataset suspects(test.vocabulary(), n, sr);
        for (const Sample& x : test.samples()) suspects.add(x.id, x.wave, x.label);
        for (const Sample& x : triggered.samples()) suspects.add(x.id + "+trigger", x.wave, x.label);
        const AnomalyReport ar = beatrix_index(m, val, suspects, c.features);
        save_anomaly_report(ar, dir / "beatrix.json", cd);
        out["beatrix"] = {{"target_index", ar.anomaly_index[static_cast<std::size_t>(target)]},
                          {"target_flagged", static_cast<bool>(ar.flagged[static_cast<std::size_t>(target)])}};
      }
      return out;
    }

    case Stage::kChannelSim: {
      const NetworkModel m = load_checkpoint(victim_path).model;
      const Trigger t = load_trigger(trigger_path);
      const NoiseBank bank = load_bank(c);
      json rows = json::array();
      for (double dist : c.channel.distances_m) {
        for (double snr : c.channel.noise_snr_db) {
          ChannelConfig ch;
          ch.distance_m = dist;
          ch.reference_distance_m = c.channel.reference_distance_m;
          ch.noise_snr_db = snr;
          ch.seed = c.channel.seed;
          AttackOptions ao = attack_options(c);
          ao.channel = ch;
          ao.bank = &bank;
          LabeledDataset heard = test;
          for (std::size_t i = 0; i < heard.size(); ++i) {
            ChannelConfig ci = ch;
            ci.seed = derive_seed(ch.seed, {Digest().update(heard[i].id).value(), 0x6261ULL});
            heard.replace_wave(i, simulate_channel(heard[i].wave, bank, ci));
          }
          rows.push_back({{"distance_m", dist},
                          {"noise_snr_db", snr},
                          {"ba", benign_accuracy(m, heard, c.features)},
                          {"asr", attack_success_rate(m, test, target, t, ao, c.features)}});
        }
      }
      write_json({{"format", "bdlab-channel-report"},
                  {"schema_version", 1},
                  {"config_digest", cd},
                  {"grid", rows}},
                 dir / "report.json");
      return {{"grid", rows}};
    }

    default: break;
  }
  throw std::logic_error("unhandled stage");
}

// ---- sweeps ----------------------------------------------------------------

std::vector<SweepPoint> expand_sweep(const ExperimentConfig& cfg, const fs::path& out) {
  if (cfg.sweep.empty()) throw ConfigError({"sweep: no axes given"});
  json base = cfg.to_json();
  base["sweep"] = json::object();
  std::vector<SweepPoint> points;
  std::vector<std::size_t> at(cfg.sweep.size(), 0);
  while (true) {
    json j = base;
    SweepPoint p;
    char name[32];
    std::snprintf(name, sizeof name, "p%03zu", points.size());
    p.name = name;
    for (std::size_t a = 0; a < cfg.sweep.size(); ++a) {
      const json& v = cfg.sweep[a].values[at[a]];
      set_config_key(j, cfg.sweep[a].key, v);
      p.assignment[cfg.sweep[a].key] = v;
    }
    j["output_dir"] = (out / "sweep" / p.name).string();
    p.config = ExperimentConfig::from_json(j);
    points.push_back(std::move(p));
    std::size_t a = cfg.sweep.size();
    while (a > 0) {
      --a;
      if (++at[a] < cfg.sweep[a].values.size()) break;
      at[a] = 0;
      if (a == 0) return points;
    }
    if (cfg.sweep.empty()) return points;
  }
}

int run_sweep(const ExperimentConfig& cfg, const fs::path& out, int jobs, std::ostream* log) {
  const std::vector<SweepPoint> points = expand_sweep(cfg, out);
  write_resolved_config(cfg, out);
  jobs = std::max(1, std::min<int>(jobs, static_cast<int>(points.size())));
  const int threads_per_job = std::max(1, omp_get_max_threads() / jobs);
  std::vector<json> rows(points.size());
  std::atomic<std::size_t> next{0};
  std::atomic<int> failed{0};
  std::mutex log_mu;

  auto worker = [&] {
    omp_set_num_threads(threads_per_job);
    for (std::size_t i = next++; i < points.size(); i = next++) {
      const SweepPoint& p = points[i];
      const fs::path dir = p.config.output_dir;
      fs::create_directories(dir);
      std::ofstream point_log(dir / "log.txt");
      json row = {{"point", p.name}, {"assignment", p.assignment}};
      try {
        Pipeline pipe(p.config, dir, &point_log);
        pipe.run();
        const EvalReport r = read_report(pipe.stage_dir(Stage::kEvaluate) / "report.json");
        row["status"] = "ok";
        row["ba"] = r.ba;
        row["asr"] = r.asr;
        for (const auto& [k, v] : r.extra) row[k] = v;
      } catch (const std::exception& e) {
        row["status"] = "failed";
        row["error"] = e.what();
        ++failed;
      }
      rows[i] = row;
      if (log) {
        std::lock_guard<std::mutex> lock(log_mu);
        *log << "[sweep] " << p.name << " " << row["status"].get<std::string>() << "\n" << std::flush;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  write_json({{"format", "bdlab-sweep"}, {"config_digest", cfg.digest()}, {"points", rows}},
             out / "sweep" / "summary.json");
  std::ofstream csv(out / "sweep" / "summary.csv");
  csv << "point";
  for (const SweepAxis& a : cfg.sweep) csv << "," << a.key;
  csv << ",status,ba,asr\n";
  for (const json& row : rows) {
    csv << row["point"].get<std::string>();
    for (const SweepAxis& a : cfg.sweep) csv << "," << row["assignment"][a.key].dump();
    csv << "," << row["status"].get<std::string>();
    if (row["status"] == "ok") {
      csv << "," << row["ba"].get<double>() << "," << row["asr"].get<double>();
    } else {
      csv << ",,";
    }
    csv << "\n";
  }
  return failed.load();
}

}  // namespace bdlab
