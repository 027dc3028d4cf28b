#include "bdlab/attack/poison.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "json.hpp"

#include "bdlab/dsp/mixing.h"
#include "bdlab/util/random.h"

namespace bdlab {

using nlohmann::json;

SurrogateDataset build_surrogate_dataset(const LabeledDataset& target_class,
                                         const LabeledDataset& auxiliary) {
  if (target_class.empty()) throw std::invalid_argument("surrogate: empty target-class set");
  if (auxiliary.empty()) throw std::invalid_argument("surrogate: empty auxiliary set");
  const int label = target_class[0].label;
  for (const auto& s : target_class.samples()) {
    if (s.label != label) {
      throw std::invalid_argument("surrogate: target-class set holds more than one label");
    }
  }
  const std::string& name = target_class.vocabulary()[static_cast<std::size_t>(label)];
  if (auxiliary.label_index(name) >= 0) {
    throw std::invalid_argument("surrogate: class '" + name +
                                "' appears in both target and auxiliary sets");
  }
  if (auxiliary.sample_rate() != target_class.sample_rate()) {
    throw std::invalid_argument("surrogate: sample rates differ");
  }
  std::vector<std::string> vocab = auxiliary.vocabulary();
  vocab.push_back(name);
  SurrogateDataset out{LabeledDataset(vocab, target_class.nominal_length(),
                                      target_class.sample_rate()),
                       static_cast<int>(vocab.size()) - 1};
  for (const auto& s : auxiliary.samples()) out.data.add(s.id, s.wave, s.label);
  for (const auto& s : target_class.samples()) out.data.add(s.id, s.wave, out.target_label);
  return out;
}

const char* policy_name(PositionPolicy p) {
  return p == PositionPolicy::kRandom ? "random" : "fixed";
}

PositionPolicy parse_policy(const std::string& s) {
  if (s == "random") return PositionPolicy::kRandom;
  if (s == "fixed") return PositionPolicy::kFixed;
  throw std::invalid_argument("unknown position policy '" + s + "'");
}

void PoisonManifest::validate() const {
  if (!(rate >= 0.0 && rate <= 1.0)) {
    throw std::invalid_argument("PoisonManifest: rate outside [0, 1]");
  }
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (trigger_length > host_length || r.tau > host_length - trigger_length) {
      throw std::invalid_argument("PoisonManifest: tau out of range for " + r.id);
    }
    if (!seen.insert(r.id).second) {
      throw std::invalid_argument("PoisonManifest: duplicate id " + r.id);
    }
  }
}

void PoisonManifest::save(const std::filesystem::path& path) const {
  validate();
  json recs = json::array();
  for (const auto& r : records) {
    recs.push_back({{"id", r.id},
                    {"tau", r.tau},
                    {"scale", r.scale},
                    {"snr_db", r.snr_db},
                    {"noise_member", r.noise_member},
                    {"noise_snr_db", std::isfinite(r.noise_snr_db) ? json(r.noise_snr_db)
                                                                   : json(nullptr)}});
  }
  json j = {{"format", "bdlab-poison-manifest"},
            {"schema_version", 1},
            {"target_name", target_name},
            {"target_label", target_label},
            {"rate", rate},
            {"snr_db", snr_db},
            {"noise_augmented", noise_augmented},
            {"position_policy", policy_name(policy)},
            {"seed", seed},
            {"target_count", target_count},
            {"host_length", host_length},
            {"trigger_length", trigger_length},
            {"trigger_digest", trigger_digest},
            {"config_digest", config_digest},
            {"records", recs}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(1) << "\n";
}

PoisonManifest PoisonManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  const json j = json::parse(in);
  if (j.value("format", "") != "bdlab-poison-manifest" ||
      j.value("schema_version", 0) != 1) {
    throw std::runtime_error(path.string() + ": not a version-1 poison manifest");
  }
  PoisonManifest m;
  m.target_name = j.at("target_name").get<std::string>();
  m.target_label = j.at("target_label").get<int>();
  m.rate = j.at("rate").get<double>();
  m.snr_db = j.at("snr_db").get<double>();
  m.noise_augmented = j.at("noise_augmented").get<bool>();
  m.policy = parse_policy(j.at("position_policy").get<std::string>());
  m.seed = j.at("seed").get<std::uint64_t>();
  m.target_count = j.at("target_count").get<std::size_t>();
  m.host_length = j.at("host_length").get<std::size_t>();
  m.trigger_length = j.at("trigger_length").get<std::size_t>();
  m.trigger_digest = j.at("trigger_digest").get<std::string>();
  m.config_digest = j.at("config_digest").get<std::string>();
  for (const auto& r : j.at("records")) {
    PoisonRecord p;
    p.id = r.at("id").get<std::string>();
    p.tau = r.at("tau").get<std::size_t>();
    p.scale = r.at("scale").get<double>();
    p.snr_db = r.at("snr_db").get<double>();
    p.noise_member = r.at("noise_member").get<int>();
    if (!r.at("noise_snr_db").is_null()) p.noise_snr_db = r.at("noise_snr_db").get<double>();
    m.records.push_back(std::move(p));
  }
  m.validate();
  return m;
}

PoisonResult poison_dataset(const LabeledDataset& victim, int target, double rate,
                            const Trigger& trigger, double snr_db,
                            const NoiseBank* noise, std::uint64_t seed,
                            const PoisonOptions& opts) {
  if (target < 0 || target >= victim.num_classes()) {
    throw std::out_of_range("poison_dataset: target label outside vocabulary");
  }
  if (!(rate >= 0.0 && rate <= 1.0)) {
    throw std::invalid_argument("poison_dataset: rate outside [0, 1]");
  }
  if (noise && noise->empty()) throw std::invalid_argument("poison_dataset: empty noise bank");
  trigger.validate();
  const std::size_t n = victim.nominal_length();
  const std::size_t l = trigger.length();
  if (l >= n) throw std::invalid_argument("poison_dataset: trigger not shorter than hosts");
  if (opts.policy == PositionPolicy::kFixed && opts.fixed_tau > n - l) {
    throw std::out_of_range("poison_dataset: fixed tau out of range");
  }

  PoisonResult res{victim, {}};
  PoisonManifest& m = res.manifest;
  m.target_name = victim.vocabulary()[static_cast<std::size_t>(target)];
  m.target_label = target;
  m.rate = rate;
  m.snr_db = snr_db;
  m.noise_augmented = noise != nullptr;
  m.policy = opts.policy;
  m.seed = seed;
  m.host_length = n;
  m.trigger_length = l;
  m.trigger_digest = trigger.digest();

  std::vector<std::size_t> pool = victim.indices_of(target);
  m.target_count = pool.size();
  const auto k = static_cast<std::size_t>(std::floor(rate * static_cast<double>(pool.size())));
  Rng rng = make_rng(seed, {0x706f69736f6eULL});
  shuffle(pool.begin(), pool.end(), rng);
  pool.resize(k);
  std::sort(pool.begin(), pool.end());

  // Assignments first, in order, so the parallel pass below is seed-stable.
  struct Job {
    std::size_t pos;
    std::size_t tau;
    int member;
    double noise_snr;
    std::uint64_t noise_seed;
  };
  std::vector<Job> jobs;
  jobs.reserve(k);
  for (std::size_t pos : pool) {
    Job j{pos, opts.fixed_tau, -1, std::numeric_limits<double>::quiet_NaN(), 0};
    if (opts.policy == PositionPolicy::kRandom) {
      j.tau = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(n - l)));
    }
    if (noise) {
      j.member = static_cast<int>(uniform_int(rng, 0, static_cast<std::int64_t>(noise->size()) - 1));
      j.noise_snr = opts.noise_snr_lo_db == opts.noise_snr_hi_db
                        ? opts.noise_snr_lo_db
                        : uniform_real(rng, opts.noise_snr_lo_db, opts.noise_snr_hi_db);
      j.noise_seed = rng();
    }
    jobs.push_back(j);
  }

  m.records.resize(k);
  std::vector<Waveform> waves(k);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < k; ++i) {
    const Job& j = jobs[i];
    const Sample& s = victim[j.pos];
    const double scale = scale_for_snr(s.wave, trigger.delta, snr_db);
    std::vector<double> scaled(trigger.delta.vector());
    for (double& v : scaled) v *= scale;
    PoisonRecord& r = m.records[i];
    r.id = s.id;
    r.tau = j.tau;
    r.scale = scale;
    r.snr_db = bdlab::snr_db(s.wave.samples(), scaled);
    Waveform w = add_trigger(s.wave, trigger.delta, j.tau, scale);
    if (noise) {
      w = mix_noise(w, (*noise)[static_cast<std::size_t>(j.member)], j.noise_snr, j.noise_seed);
      r.noise_member = j.member;
      r.noise_snr_db = j.noise_snr;
    }
    waves[i] = std::move(w);
  }
  for (std::size_t i = 0; i < k; ++i) res.dataset.replace_wave(jobs[i].pos, waves[i]);
  m.validate();
  return res;
}

}  // namespace bdlab
