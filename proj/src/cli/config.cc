#include "bdlab/cli/config.h"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "bdlab/model/network.h"
#include "bdlab/util/digest.h"
#include "bdlab/util/random.h"

namespace bdlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

// Reads the keys of one JSON object, recording type errors and, on
// finish(), every key that was never asked for.
class Reader {
 public:
  Reader(const json& obj, std::string path, std::vector<std::string>& errors)
      : obj_(obj), path_(std::move(path)), errors_(errors) {}

  bool has(const char* key) {
    seen_.insert(key);
    return obj_.contains(key);
  }

  void get(const char* key, bool& out) {
    if (const json* v = find(key)) {
      if (v->is_boolean()) out = v->get<bool>();
      else bad(key, "a boolean");
    }
  }
  void get(const char* key, int& out) {
    if (const json* v = find(key)) {
      if (v->is_number_integer()) out = v->get<int>();
      else bad(key, "an integer");
    }
  }
  void get(const char* key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      const bool ok = v->is_number_unsigned() || (v->is_number_integer() && v->get<std::int64_t>() >= 0);
      if (ok) out = v->get<std::uint64_t>();
      else bad(key, "a non-negative integer");
    }
  }
  void get(const char* key, double& out) {
    if (const json* v = find(key)) {
      if (v->is_number()) out = v->get<double>();
      else if (v->is_string() && (*v == "inf" || *v == "+inf")) out = kNoNoise;
      else bad(key, "a number");
    }
  }
  void get(const char* key, std::string& out) {
    if (const json* v = find(key)) {
      if (v->is_string()) out = v->get<std::string>();
      else bad(key, "a string");
    }
  }
  void get(const char* key, std::vector<double>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) return bad(key, "an array of numbers");
      std::vector<double> r;
      for (const json& e : *v) {
        if (!e.is_number()) return bad(key, "an array of numbers");
        r.push_back(e.get<double>());
      }
      out = std::move(r);
    }
  }
  void get(const char* key, std::vector<std::string>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) return bad(key, "an array of strings");
      std::vector<std::string> r;
      for (const json& e : *v) {
        if (!e.is_string()) return bad(key, "an array of strings");
        r.push_back(e.get<std::string>());
      }
      out = std::move(r);
    }
  }
  void get(const char* key, std::optional<double>& out) {
    if (const json* v = find(key)) {
      if (v->is_null()) out.reset();
      else if (v->is_number()) out = v->get<double>();
      else bad(key, "a number or null");
    }
  }
  void get(const char* key, std::optional<fs::path>& out) {
    if (const json* v = find(key)) {
      if (v->is_null()) out.reset();
      else if (v->is_string()) out = fs::path(v->get<std::string>());
      else bad(key, "a path string or null");
    }
  }

  // Nested object, or nullptr when absent or mistyped.
  const json* object(const char* key) {
    const json* v = find(key);
    if (v && !v->is_object()) {
      if (!v->is_null()) bad(key, "an object");
      return nullptr;
    }
    return v;
  }

  std::string sub(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() {
    for (const auto& [k, v] : obj_.items()) {
      if (!seen_.count(k)) errors_.push_back(sub(k.c_str()) + ": unknown key");
    }
  }

 private:
  const json* find(const char* key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }
  void bad(const char* key, const char* want) {
    errors_.push_back(sub(key) + ": expected " + want);
  }

  const json& obj_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

template <typename F>
void section(Reader& parent, const char* key, std::vector<std::string>& errors, F&& body) {
  if (const json* o = parent.object(key)) {
    Reader r(*o, parent.sub(key), errors);
    body(r);
    r.finish();
  }
}

void read_train(Reader& parent, const char* key, TrainConfig& t,
                std::vector<std::string>& errors) {
  section(parent, key, errors, [&](Reader& r) {
    r.get("epochs", t.epochs);
    r.get("batch_size", t.batch_size);
    r.get("learning_rate", t.learning_rate);
    r.get("seed", t.seed);
    r.get("patience", t.patience);
  });
}

json train_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"seed", t.seed},
          {"patience", t.patience}};
}

json number_or_inf(double v) { return std::isinf(v) && v > 0 ? json("inf") : json(v); }

json path_json(const std::optional<fs::path>& p) {
  return p ? json(p->string()) : json(nullptr);
}

// Runs `check`, turning a thrown message into a problem for `field`.
template <typename F>
void expect_valid(std::vector<std::string>& problems, const std::string& field, F&& check) {
  try {
    check();
  } catch (const std::exception& e) {
    problems.push_back(field + ": " + e.what());
  }
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error("invalid config: " + join(problems, "; ")),
      problems_(std::move(problems)) {}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  std::vector<std::string> errors;
  if (!j.is_object()) throw ConfigError({"config: expected a JSON object"});
  ExperimentConfig c;
  Reader top(j, "", errors);
  if (!top.has("target")) errors.push_back("target: required field missing");
  top.get("target", c.target);
  {
    std::optional<fs::path> out;
    top.get("output_dir", out);
    if (out) c.output_dir = *out;
  }

  section(top, "data", errors, [&](Reader& r) {
    DataSection& d = c.data;
    r.get("source", d.source);
    r.get("root", d.root);
    r.get("victim_classes", d.victim_classes);
    r.get("aux_classes", d.aux_classes);
    r.get("split_seed", d.split_seed);
    r.get("noise_dir", d.noise_dir);
    section(r, "synth", errors, [&](Reader& s) {
      s.get("num_classes", d.synth.num_classes);
      s.get("samples_per_class", d.synth.samples_per_class);
      s.get("duration_s", d.synth.duration_s);
      s.get("sample_rate", d.synth.sample_rate);
      s.get("pitch_jitter", d.synth.pitch_jitter);
      s.get("amplitude_jitter", d.synth.amplitude_jitter);
      s.get("onset_jitter_s", d.synth.onset_jitter_s);
      s.get("background_level", d.synth.background_level);
      s.get("seed", d.synth.seed);
    });
    section(r, "noise", errors, [&](Reader& s) {
      s.get("synthesize_if_missing", d.noise.synthesize_if_missing);
      s.get("synth_count", d.noise.synth_count);
      s.get("synth_duration_s", d.noise.synth_duration_s);
      s.get("seed", d.noise.seed);
    });
  });

  section(top, "features", errors, [&](Reader& r) {
    MfccConfig& f = c.features;
    r.get("sample_rate", f.sample_rate);
    r.get("n_mfcc", f.n_mfcc);
    r.get("n_fft", f.n_fft);
    r.get("hop_length", f.hop_length);
    r.get("n_mels", f.n_mels);
    r.get("log_floor", f.log_floor);
    r.get("window", f.window);
    r.get("f_min", f.f_min);
    r.get("f_max", f.f_max);
  });

  for (auto [key, m] : {std::pair{"surrogate", &c.surrogate}, std::pair{"victim", &c.victim}}) {
    section(top, key, errors, [&, m = m](Reader& r) {
      r.get("arch", m->arch);
      r.get("build_seed", m->build_seed);
      read_train(r, "train", m->train, errors);
    });
  }

  section(top, "trigger", errors, [&](Reader& r) {
    TriggerGenConfig& g = c.trigger.gen;
    r.get("kind", c.trigger.kind);
    r.get("epsilon", g.epsilon);
    r.get("duration_s", g.duration_s);
    r.get("epochs", g.epochs);
    r.get("learning_rate", g.learning_rate);
    r.get("seed", g.seed);
    r.get("noise_aware", g.noise_aware);
    r.get("noise_snr_lo_db", g.noise_snr_lo_db);
    r.get("noise_snr_hi_db", g.noise_snr_hi_db);
    r.get("batch_size", g.batch_size);
  });

  section(top, "poison", errors, [&](Reader& r) {
    PoisonSection& p = c.poison;
    r.get("rate", p.rate);
    r.get("snr_db", p.snr_db);
    r.get("noise_augmented", p.noise_augmented);
    std::string policy = policy_name(p.options.policy);
    r.get("policy", policy);
    expect_valid(errors, "poison.policy", [&] { p.options.policy = parse_policy(policy); });
    r.get("fixed_tau", p.options.fixed_tau);
    r.get("noise_snr_lo_db", p.options.noise_snr_lo_db);
    r.get("noise_snr_hi_db", p.options.noise_snr_hi_db);
    r.get("seed", p.seed);
  });

  section(top, "eval", errors, [&](Reader& r) {
    EvalSection& e = c.eval;
    std::string policy = policy_name(e.policy);
    r.get("policy", policy);
    expect_valid(errors, "eval.policy", [&] { e.policy = parse_policy(policy); });
    r.get("fixed_tau", e.fixed_tau);
    r.get("snr_db", e.snr_db);
    r.get("seed", e.seed);
    r.get("compare_clean", e.compare_clean);
    r.get("class_wise", e.class_wise);
    section(r, "channel", errors, [&](Reader& s) {
      ChannelConfig ch;
      s.get("distance_m", ch.distance_m);
      s.get("reference_distance_m", ch.reference_distance_m);
      s.get("noise_snr_db", ch.noise_snr_db);
      s.get("seed", ch.seed);
      e.channel = ch;
    });
  });

  section(top, "defense", errors, [&](Reader& r) {
    DefenseSection& d = c.defense;
    r.get("enabled", d.enabled);
    r.get("filter_ratios", d.filter_ratios);
    r.get("filter_random", d.filter_random);
    r.get("filter_seed", d.filter_seed);
    r.get("prune_ratios", d.prune_ratios);
    r.get("strip_overlays", d.strip_overlays);
    r.get("strip_fpr", d.strip_fpr);
    r.get("strip_seed", d.strip_seed);
    r.get("strip_samples", d.strip_samples);
    r.get("beatrix", d.beatrix);
  });

  section(top, "channel", errors, [&](Reader& r) {
    ChannelSection& ch = c.channel;
    r.get("enabled", ch.enabled);
    r.get("distances_m", ch.distances_m);
    r.get("noise_snr_db", ch.noise_snr_db);
    r.get("reference_distance_m", ch.reference_distance_m);
    r.get("seed", ch.seed);
  });

  if (const json* grid = top.object("sweep")) {
    for (const auto& [key, values] : grid->items()) {
      if (!values.is_array() || values.empty()) {
        errors.push_back("sweep." + key + ": expected a non-empty array");
        continue;
      }
      c.sweep.push_back({key, std::vector<json>(values.begin(), values.end())});
    }
  }
  top.finish();

  try {
    c.validate();
  } catch (const ConfigError& e) {
    errors.insert(errors.end(), e.problems().begin(), e.problems().end());
  }
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return c;
}

json ExperimentConfig::to_json() const {
  const SynthConfig& s = data.synth;
  json j;
  j["target"] = target;
  j["output_dir"] = output_dir.string();
  j["data"] = {{"source", data.source},
               {"root", path_json(data.root)},
               {"victim_classes", data.victim_classes},
               {"aux_classes", data.aux_classes},
               {"split_seed", data.split_seed},
               {"noise_dir", path_json(data.noise_dir)},
               {"synth",
                {{"num_classes", s.num_classes},
                 {"samples_per_class", s.samples_per_class},
                 {"duration_s", s.duration_s},
                 {"sample_rate", s.sample_rate},
                 {"pitch_jitter", s.pitch_jitter},
                 {"amplitude_jitter", s.amplitude_jitter},
                 {"onset_jitter_s", s.onset_jitter_s},
                 {"background_level", s.background_level},
                 {"seed", s.seed}}},
               {"noise",
                {{"synthesize_if_missing", data.noise.synthesize_if_missing},
                 {"synth_count", data.noise.synth_count},
                 {"synth_duration_s", data.noise.synth_duration_s},
                 {"seed", data.noise.seed}}}};
  j["features"] = {{"sample_rate", features.sample_rate},
                   {"n_mfcc", features.n_mfcc},
                   {"n_fft", features.n_fft},
                   {"hop_length", features.hop_length},
                   {"n_mels", features.n_mels},
                   {"log_floor", features.log_floor},
                   {"window", features.window},
                   {"f_min", features.f_min},
                   {"f_max", features.f_max}};
  for (auto [key, m] : {std::pair{"surrogate", &surrogate}, std::pair{"victim", &victim}}) {
    j[key] = {{"arch", m->arch}, {"build_seed", m->build_seed}, {"train", train_json(m->train)}};
  }
  const TriggerGenConfig& g = trigger.gen;
  j["trigger"] = {{"kind", trigger.kind},
                  {"epsilon", g.epsilon},
                  {"duration_s", g.duration_s ? json(*g.duration_s) : json(nullptr)},
                  {"epochs", g.epochs},
                  {"learning_rate", g.learning_rate},
                  {"seed", g.seed},
                  {"noise_aware", g.noise_aware},
                  {"noise_snr_lo_db", g.noise_snr_lo_db},
                  {"noise_snr_hi_db", g.noise_snr_hi_db},
                  {"batch_size", g.batch_size}};
  j["poison"] = {{"rate", poison.rate},
                 {"snr_db", poison.snr_db},
                 {"noise_augmented", poison.noise_augmented},
                 {"policy", policy_name(poison.options.policy)},
                 {"fixed_tau", poison.options.fixed_tau},
                 {"noise_snr_lo_db", poison.options.noise_snr_lo_db},
                 {"noise_snr_hi_db", poison.options.noise_snr_hi_db},
                 {"seed", poison.seed}};
  j["eval"] = {{"policy", policy_name(eval.policy)},
               {"fixed_tau", eval.fixed_tau},
               {"snr_db", eval.snr_db},
               {"seed", eval.seed},
               {"compare_clean", eval.compare_clean},
               {"class_wise", eval.class_wise},
               {"channel", nullptr}};
  if (eval.channel) {
    j["eval"]["channel"] = {{"distance_m", eval.channel->distance_m},
                            {"reference_distance_m", eval.channel->reference_distance_m},
                            {"noise_snr_db", number_or_inf(eval.channel->noise_snr_db)},
                            {"seed", eval.channel->seed}};
  }
  j["defense"] = {{"enabled", defense.enabled},
                  {"filter_ratios", defense.filter_ratios},
                  {"filter_random", defense.filter_random},
                  {"filter_seed", defense.filter_seed},
                  {"prune_ratios", defense.prune_ratios},
                  {"strip_overlays", defense.strip_overlays},
                  {"strip_fpr", defense.strip_fpr},
                  {"strip_seed", defense.strip_seed},
                  {"strip_samples", defense.strip_samples},
                  {"beatrix", defense.beatrix}};
  j["channel"] = {{"enabled", channel.enabled},
                  {"distances_m", channel.distances_m},
                  {"noise_snr_db", channel.noise_snr_db},
                  {"reference_distance_m", channel.reference_distance_m},
                  {"seed", channel.seed}};
  json grid = json::object();
  for (const SweepAxis& a : sweep) grid[a.key] = a.values;
  j["sweep"] = grid;
  return j;
}

void ExperimentConfig::validate() const {
  std::vector<std::string> p;
  const std::set<std::string> victims(data.victim_classes.begin(), data.victim_classes.end());
  if (target.empty()) p.push_back("target: must name a victim class");
  else if (!victims.count(target)) p.push_back("target: '" + target + "' is not in data.victim_classes");
  if (data.victim_classes.size() < 2) p.push_back("data.victim_classes: need at least 2 classes");
  if (victims.size() != data.victim_classes.size()) p.push_back("data.victim_classes: duplicate class");
  if (data.aux_classes.empty()) p.push_back("data.aux_classes: need at least 1 class");
  for (const std::string& a : data.aux_classes) {
    if (victims.count(a)) p.push_back("data.aux_classes: '" + a + "' is also a victim class");
  }

  std::vector<std::string> available;
  if (data.source == "synth") {
    expect_valid(p, "data.synth", [&] { data.synth.validate(); });
    for (int k = 0; k < data.synth.num_classes; ++k) available.push_back(synth_class_name(k));
    if (data.root) p.push_back("data.root: only used with source \"dir\"");
  } else if (data.source == "dir") {
    if (!data.root) p.push_back("data.root: required when data.source is \"dir\"");
    else if (!fs::is_directory(*data.root)) p.push_back("data.root: no such directory: " + data.root->string());
    else {
      for (const auto& e : fs::directory_iterator(*data.root)) {
        if (e.is_directory()) available.push_back(e.path().filename().string());
      }
    }
  } else {
    p.push_back("data.source: expected \"synth\" or \"dir\", got '" + data.source + "'");
  }
  if (!available.empty() || data.source == "dir") {
    const std::set<std::string> have(available.begin(), available.end());
    for (const auto* list : {&data.victim_classes, &data.aux_classes}) {
      for (const std::string& name : *list) {
        if (!have.count(name)) p.push_back("data: class '" + name + "' not found in the corpus");
      }
    }
  }
  if (data.noise_dir && !fs::is_directory(*data.noise_dir)) {
    p.push_back("data.noise_dir: no such directory: " + data.noise_dir->string());
  }
  if (data.noise.synth_count < 1) p.push_back("data.noise.synth_count: must be >= 1");
  if (!(data.noise.synth_duration_s > 0.0)) p.push_back("data.noise.synth_duration_s: must be > 0");

  expect_valid(p, "features", [&] { features.validate(); });
  const int rate = data.source == "synth" ? data.synth.sample_rate : features.sample_rate;
  if (features.sample_rate != rate) p.push_back("features.sample_rate: differs from data.synth.sample_rate");

  for (auto [key, m] : {std::pair{"surrogate", &surrogate}, std::pair{"victim", &victim}}) {
    const std::string k = key;
    expect_valid(p, k + ".arch", [&] { ArchSpec::from_id(m->arch, 13, 32, 2); });
    expect_valid(p, k + ".train", [&] { m->train.validate(); });
  }

  if (trigger.kind != "optimized" && trigger.kind != "designated") {
    p.push_back("trigger.kind: expected \"optimized\" or \"designated\", got '" + trigger.kind + "'");
  }
  expect_valid(p, "trigger", [&] { trigger.gen.validate(); });

  if (!(poison.rate >= 0.0 && poison.rate <= 1.0)) p.push_back("poison.rate: must lie in [0, 1]");
  if (!std::isfinite(poison.snr_db)) p.push_back("poison.snr_db: must be finite");
  if (!(poison.options.noise_snr_lo_db <= poison.options.noise_snr_hi_db)) {
    p.push_back("poison.noise_snr_lo_db: must not exceed noise_snr_hi_db");
  }
  if (!std::isfinite(eval.snr_db)) p.push_back("eval.snr_db: must be finite");
  if (eval.channel) expect_valid(p, "eval.channel", [&] { eval.channel->validate(); });

  for (double f : defense.filter_ratios) {
    if (!(f >= 0.0 && f < 1.0)) p.push_back("defense.filter_ratios: each ratio must lie in [0, 1)");
  }
  for (double r : defense.prune_ratios) {
    if (!(r >= 0.0 && r <= 1.0)) p.push_back("defense.prune_ratios: each ratio must lie in [0, 1]");
  }
  if (defense.strip_overlays < 1) p.push_back("defense.strip_overlays: must be >= 1");
  if (!(defense.strip_fpr >= 0.0 && defense.strip_fpr < 1.0)) p.push_back("defense.strip_fpr: must lie in [0, 1)");

  if (!(channel.reference_distance_m > 0.0)) p.push_back("channel.reference_distance_m: must be > 0");
  for (double d : channel.distances_m) {
    if (!(d >= 0.0)) p.push_back("channel.distances_m: distances must be >= 0");
  }

  json base = to_json();
  for (const SweepAxis& a : sweep) {
    if (a.key == "sweep" || a.key.rfind("sweep.", 0) == 0 || a.key == "output_dir") {
      p.push_back("sweep." + a.key + ": cannot be swept");
      continue;
    }
    expect_valid(p, "sweep." + a.key, [&] {
      json probe = base;
      set_config_key(probe, a.key, nullptr);
    });
  }

  if (!p.empty()) throw ConfigError(std::move(p));
}

std::string ExperimentConfig::digest() const {
  json j = to_json();
  j.erase("output_dir");
  j.erase("sweep");
  return digest_of(j.dump());
}

void ExperimentConfig::override_seed(std::uint64_t seed) {
  auto set = [&](const char* name, std::uint64_t& field) {
    field = derive_seed(seed, {Digest().update(name).value()});
  };
  set("data.synth.seed", data.synth.seed);
  set("data.split_seed", data.split_seed);
  set("data.noise.seed", data.noise.seed);
  set("surrogate.build_seed", surrogate.build_seed);
  set("surrogate.train.seed", surrogate.train.seed);
  set("victim.build_seed", victim.build_seed);
  set("victim.train.seed", victim.train.seed);
  set("trigger.seed", trigger.gen.seed);
  set("poison.seed", poison.seed);
  set("eval.seed", eval.seed);
  if (eval.channel) set("eval.channel.seed", eval.channel->seed);
  set("defense.filter_seed", defense.filter_seed);
  set("defense.strip_seed", defense.strip_seed);
  set("channel.seed", channel.seed);
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"config: cannot open " + path.string()});
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError({"config: " + path.string() + ": " + e.what()});
  }
  return ExperimentConfig::from_json(j);
}

ExperimentConfig default_config(const std::string& target) {
  ExperimentConfig c;
  c.target = target;
  return c;
}

void set_config_key(json& j, const std::string& dotted, const json& value) {
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    const std::string part = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) {
      throw std::invalid_argument("no config key '" + dotted + "'");
    }
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = value;
}

}  // namespace bdlab
