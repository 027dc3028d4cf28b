#include "bdlab/attack/trigger.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "bdlab/autograd/adam.h"
#include "bdlab/autograd/graph.h"
#include "bdlab/dsp/mixing.h"
#include "bdlab/dsp/wav.h"
#include "bdlab/model/training.h"
#include "bdlab/util/digest.h"
#include "bdlab/util/random.h"

namespace bdlab {

using nlohmann::json;

namespace {

constexpr std::uint64_t kInitSalt = 0x7472696767657201ULL;
constexpr std::uint64_t kEpochSalt = 0x7472696767657202ULL;
constexpr std::uint64_t kEvalSalt = 0x7472696767657203ULL;
constexpr int kEvalBatch = 64;

json nan_to_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double null_to_nan(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

// Forward (and optionally backward) of the objective for one batch.
template <typename T>
TriggerObjective run_objective(const Network<T>& model, const MfccExtractor& fx,
                               std::span<const TriggerVisit> visits,
                               std::span<const double> delta, int target,
                               bool want_grad) {
  if (visits.empty()) throw std::invalid_argument("trigger_objective: no visits");
  if (target < 0 || target >= model.num_classes()) {
    throw std::out_of_range("trigger_objective: target " + std::to_string(target) +
                            " outside vocabulary");
  }
  const std::size_t l = delta.size();
  const int b = static_cast<int>(visits.size());
  const int h = model.arch().n_mfcc;
  const int w = model.arch().n_frames;
  const std::size_t row = static_cast<std::size_t>(h) * w;

  std::vector<MfccExtractor::Trace> traces(visits.size());
  std::vector<std::vector<char>> inside(visits.size());
  ag::Tensor<T> input({b, 1, h, w});
  for (std::size_t v = 0; v < visits.size(); ++v) {
    const TriggerVisit& vis = visits[v];
    const std::size_t n = vis.host.size();
    if (l >= n) throw std::invalid_argument("trigger_objective: trigger not shorter than host");
    if (vis.tau > n - l) throw std::out_of_range("trigger_objective: tau out of range");
    if (!vis.noise.empty() && vis.noise.size() != n) {
      throw std::invalid_argument("trigger_objective: noise length mismatch");
    }
    std::vector<double> xp(vis.host.begin(), vis.host.end());
    if (!vis.noise.empty()) {
      for (std::size_t i = 0; i < n; ++i) xp[i] += vis.noise[i];
    }
    for (std::size_t j = 0; j < l; ++j) xp[vis.tau + j] += delta[j];
    auto& in = inside[v];
    in.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      in[i] = xp[i] > -1.0 && xp[i] < 1.0;
      xp[i] = std::clamp(xp[i], -1.0, 1.0);
    }
    traces[v] = fx.trace(xp);
    const FeatureTensor& f = traces[v].features;
    if (f.n_mfcc != h || f.n_frames != w) {
      throw std::invalid_argument("trigger_objective: feature shape does not match model");
    }
    for (std::size_t k = 0; k < row; ++k) input[v * row + k] = static_cast<T>(f.values[k]);
  }

  ag::Graph<T> g;
  const auto vars = model.bind(g, false);
  const auto x = g.leaf(std::move(input), want_grad);
  const auto out = model.forward(g, x, vars);
  const auto loss = g.nll(g.log_softmax(out.logits), std::vector<int>(visits.size(), target));

  TriggerObjective res;
  res.loss = static_cast<double>(g.value(loss).item());
  if (!want_grad) return res;

  g.backward(loss);
  const ag::Tensor<T> gin = g.grad(x);
  res.grad.assign(l, 0.0);
  for (std::size_t v = 0; v < visits.size(); ++v) {
    FeatureTensor up = traces[v].features;
    for (std::size_t k = 0; k < row; ++k) up.values[k] = static_cast<double>(gin[v * row + k]);
    const std::vector<double> gx = fx.gradient(traces[v], up);
    const std::size_t tau = visits[v].tau;
    for (std::size_t j = 0; j < l; ++j) {
      if (inside[v][tau + j]) res.grad[j] += gx[tau + j];
    }
  }
  return res;
}

std::vector<double> scaled_noise(const Waveform& host, const NoiseBank& bank,
                                 double lo, double hi, Rng& rng) {
  const auto member = static_cast<std::size_t>(
      uniform_int(rng, 0, static_cast<std::int64_t>(bank.size()) - 1));
  const double snr = lo == hi ? lo : uniform_real(rng, lo, hi);
  const std::uint64_t seed = rng();
  std::vector<double> seg = noise_segment(bank[member], host.size(), seed);
  if (host.energy() <= 0.0 || energy(seg) <= 0.0) return {};
  const double s = scale_for_snr(host.samples(), seg, snr);
  for (double& v : seg) v *= s;
  return seg;
}

}  // namespace

void TriggerGenConfig::validate() const {
  std::vector<std::string> bad;
  if (!(epsilon > 0.0 && epsilon <= 1.0)) bad.push_back("epsilon must lie in (0, 1]");
  if (duration_s && !(*duration_s > 0.0)) bad.push_back("duration_s must be positive");
  if (epochs < 0) bad.push_back("epochs must be >= 0");
  if (!(learning_rate > 0.0)) bad.push_back("learning_rate must be positive");
  if (batch_size < 1) bad.push_back("batch_size must be >= 1");
  if (!(noise_snr_lo_db <= noise_snr_hi_db)) bad.push_back("noise SNR range is inverted");
  if (!bad.empty()) {
    std::string msg = "TriggerGenConfig:";
    for (const auto& b : bad) msg += " " + b + ";";
    throw std::invalid_argument(msg);
  }
}

std::string TriggerGenConfig::describe() const {
  std::ostringstream os;
  os.precision(17);
  os << "trigger eps=" << epsilon << " dur=" << (duration_s ? std::to_string(*duration_s) : std::string("half")) << " epochs=" << epochs
     << " lr=" << learning_rate << " seed=" << seed << " noise=" << noise_aware
     << " snr=[" << noise_snr_lo_db << "," << noise_snr_hi_db << "] batch=" << batch_size;
  return os.str();
}

std::size_t TriggerGenConfig::length(int sample_rate, std::size_t host_length) const {
  if (!duration_s) return host_length / 2;
  return static_cast<std::size_t>(std::llround(*duration_s * sample_rate));
}

void Trigger::validate() const {
  if (!(epsilon > 0.0 && epsilon <= 1.0)) {
    throw std::invalid_argument("Trigger: epsilon outside (0, 1]");
  }
  if (delta.empty()) throw std::invalid_argument("Trigger: empty delta");
  if (delta.peak() > epsilon) {
    throw std::invalid_argument("Trigger: max |delta| " + std::to_string(delta.peak()) +
                                " exceeds epsilon " + std::to_string(epsilon));
  }
}

std::string Trigger::digest() const {
  Digest d;
  d.update(delta.samples());
  d.update(static_cast<std::int64_t>(delta.sample_rate()));
  d.update(epsilon);
  d.update(target_name);
  d.update(record.kind);
  return d.hex();
}

std::filesystem::path trigger_sidecar(const std::filesystem::path& wav_path) {
  std::filesystem::path p = wav_path;
  p.replace_extension(".json");
  return p;
}

void save_trigger(const Trigger& t, const std::filesystem::path& wav_path) {
  t.validate();
  save_wav(t.delta, wav_path);
  const TriggerRecord& r = t.record;
  json j;
  j["format"] = "bdlab-trigger";
  j["schema_version"] = 1;
  j["digest"] = t.digest();
  j["epsilon"] = t.epsilon;
  j["target_name"] = t.target_name;
  j["target_label"] = t.target_label;
  j["sample_rate"] = t.delta.sample_rate();
  j["length"] = t.length();
  j["samples"] = t.delta.vector();
  j["record"] = {{"kind", r.kind},
                 {"epochs", r.epochs},
                 {"learning_rate", r.learning_rate},
                 {"seed", r.seed},
                 {"noise_aware", r.noise_aware},
                 {"noise_snr_db", {r.noise_snr_lo_db, r.noise_snr_hi_db}},
                 {"batch_size", r.batch_size},
                 {"surrogate_digest", r.surrogate_digest},
                 {"config_digest", r.config_digest},
                 {"loss_curve", r.loss_curve},
                 {"eval_loss_initial", nan_to_null(r.eval_loss_initial)},
                 {"eval_loss_final", nan_to_null(r.eval_loss_final)}};
  const auto side = trigger_sidecar(wav_path);
  std::ofstream out(side);
  if (!out) throw std::runtime_error("cannot write " + side.string());
  out << j.dump(1) << "\n";
}

Trigger load_trigger(const std::filesystem::path& wav_path) {
  const auto side = trigger_sidecar(wav_path);
  std::ifstream in(side);
  if (!in) throw std::runtime_error("cannot read trigger sidecar " + side.string());
  const json j = json::parse(in);
  if (j.value("format", "") != "bdlab-trigger") {
    throw std::runtime_error(side.string() + ": not a trigger sidecar");
  }
  if (j.at("schema_version").get<int>() != 1) {
    throw std::runtime_error(side.string() + ": unsupported schema version");
  }
  Trigger t;
  t.delta = Waveform(j.at("samples").get<std::vector<double>>(),
                     j.at("sample_rate").get<int>());
  t.epsilon = j.at("epsilon").get<double>();
  t.target_name = j.at("target_name").get<std::string>();
  t.target_label = j.at("target_label").get<int>();
  const json& r = j.at("record");
  t.record.kind = r.at("kind").get<std::string>();
  t.record.epochs = r.at("epochs").get<int>();
  t.record.learning_rate = r.at("learning_rate").get<double>();
  t.record.seed = r.at("seed").get<std::uint64_t>();
  t.record.noise_aware = r.at("noise_aware").get<bool>();
  t.record.noise_snr_lo_db = r.at("noise_snr_db").at(0).get<double>();
  t.record.noise_snr_hi_db = r.at("noise_snr_db").at(1).get<double>();
  t.record.batch_size = r.at("batch_size").get<int>();
  t.record.surrogate_digest = r.at("surrogate_digest").get<std::string>();
  t.record.config_digest = r.value("config_digest", "");
  t.record.loss_curve = r.at("loss_curve").get<std::vector<double>>();
  t.record.eval_loss_initial = null_to_nan(r.at("eval_loss_initial"));
  t.record.eval_loss_final = null_to_nan(r.at("eval_loss_final"));
  t.validate();
  if (t.digest() != j.at("digest").get<std::string>()) {
    throw std::runtime_error(side.string() + ": trigger digest mismatch");
  }
  return t;
}

template <typename T>
TriggerObjective trigger_objective(const Network<T>& model,
                                   const MfccExtractor& features,
                                   std::span<const TriggerVisit> visits,
                                   std::span<const double> delta, int target) {
  return run_objective(model, features, visits, delta, target, true);
}

template TriggerObjective trigger_objective<float>(const Network<float>&,
                                                   const MfccExtractor&,
                                                   std::span<const TriggerVisit>,
                                                   std::span<const double>, int);
template TriggerObjective trigger_objective<double>(const Network<double>&,
                                                    const MfccExtractor&,
                                                    std::span<const TriggerVisit>,
                                                    std::span<const double>, int);

double trigger_eval_loss(const NetworkModel& surrogate, const LabeledDataset& d_sur,
                         int target, std::span<const double> delta,
                         std::uint64_t seed, const MfccConfig& features) {
  if (d_sur.empty()) throw std::invalid_argument("trigger_eval_loss: empty dataset");
  const auto fx = shared_extractor(features);
  const std::size_t n = d_sur.nominal_length();
  const std::size_t l = delta.size();
  if (l >= n) throw std::invalid_argument("trigger_eval_loss: trigger not shorter than host");
  Rng rng = make_rng(seed, {kEvalSalt});
  double total = 0.0;
  for (std::size_t start = 0; start < d_sur.size(); start += kEvalBatch) {
    const std::size_t len = std::min<std::size_t>(kEvalBatch, d_sur.size() - start);
    std::vector<TriggerVisit> visits(len);
    for (std::size_t i = 0; i < len; ++i) {
      visits[i].host = d_sur[start + i].wave.samples();
      visits[i].tau = static_cast<std::size_t>(
          uniform_int(rng, 0, static_cast<std::int64_t>(n - l)));
    }
    total += run_objective(surrogate, *fx, visits, delta, target, false).loss *
             static_cast<double>(len);
  }
  return total / static_cast<double>(d_sur.size());
}

Trigger generate_trigger(const NetworkModel& surrogate, const LabeledDataset& d_sur,
                         int target, const TriggerGenConfig& cfg,
                         const MfccConfig& features, const NoiseBank* bank) {
  cfg.validate();
  if (d_sur.empty()) throw std::invalid_argument("generate_trigger: empty surrogate dataset");
  if (target < 0 || target >= surrogate.num_classes()) {
    throw std::out_of_range("generate_trigger: target outside surrogate vocabulary");
  }
  if (surrogate.vocabulary() != d_sur.vocabulary()) {
    throw std::invalid_argument("generate_trigger: surrogate vocabulary differs from dataset");
  }
  if (cfg.noise_aware && (bank == nullptr || bank->empty())) {
    throw std::invalid_argument("generate_trigger: noise-aware mode needs a non-empty noise bank");
  }
  const int sr = d_sur.sample_rate();
  const std::size_t n = d_sur.nominal_length();
  const std::size_t l = cfg.length(sr, n);
  if (l == 0 || l >= n) {
    throw std::invalid_argument("generate_trigger: trigger length " + std::to_string(l) +
                                " must be in [1, " + std::to_string(n) + ")");
  }
  const auto fx = shared_extractor(features);

  Rng init = make_rng(cfg.seed, {kInitSalt});
  ag::Tensor<double> delta({static_cast<int>(l)});
  for (double& v : delta.data()) v = uniform_real(init, -cfg.epsilon, cfg.epsilon);

  Trigger t;
  t.epsilon = cfg.epsilon;
  t.target_label = target;
  t.target_name = surrogate.vocabulary()[static_cast<std::size_t>(target)];
  TriggerRecord& rec = t.record;
  rec.epochs = cfg.epochs;
  rec.learning_rate = cfg.learning_rate;
  rec.seed = cfg.seed;
  rec.noise_aware = cfg.noise_aware;
  rec.noise_snr_lo_db = cfg.noise_snr_lo_db;
  rec.noise_snr_hi_db = cfg.noise_snr_hi_db;
  rec.batch_size = cfg.batch_size;
  rec.surrogate_digest = model_digest(surrogate);
  rec.eval_loss_initial = trigger_eval_loss(surrogate, d_sur, target, delta.data(),
                                            cfg.seed, features);

  ag::AdamState<double> adam;
  ag::Tensor<double>* params[] = {&delta};
  std::vector<std::size_t> order(d_sur.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_rng(cfg.seed, {kEpochSalt, static_cast<std::uint64_t>(epoch)});
    shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t len = std::min<std::size_t>(cfg.batch_size, order.size() - start);
      std::vector<TriggerVisit> visits(len);
      for (std::size_t i = 0; i < len; ++i) {
        const Waveform& host = d_sur[order[start + i]].wave;
        visits[i].host = host.samples();
        visits[i].tau = static_cast<std::size_t>(
            uniform_int(rng, 0, static_cast<std::int64_t>(n - l)));
        if (cfg.noise_aware) {
          visits[i].noise = scaled_noise(host, *bank, cfg.noise_snr_lo_db,
                                         cfg.noise_snr_hi_db, rng);
        }
      }
      TriggerObjective obj = run_objective(surrogate, *fx, visits, delta.data(), target, true);
      const ag::Tensor<double> grad({static_cast<int>(l)}, std::move(obj.grad));
      const ag::Tensor<double>* grads[] = {&grad};
      ag::adam_step<double>(params, grads, adam, cfg.learning_rate);
      ag::clip_inplace<double>(delta.data(), -cfg.epsilon, cfg.epsilon);
      loss_sum += obj.loss;
      ++steps;
    }
    rec.loss_curve.push_back(loss_sum / steps);
  }
  rec.eval_loss_final = trigger_eval_loss(surrogate, d_sur, target, delta.data(),
                                          cfg.seed, features);
  t.delta = Waveform(delta.vector(), sr);
  t.validate();
  return t;
}

Trigger designated_trigger(std::size_t length, int sample_rate, double epsilon,
                           std::uint64_t seed, const std::string& target_name,
                           int target_label) {
  if (length == 0) throw std::invalid_argument("designated_trigger: empty length");
  if (!(epsilon > 0.0 && epsilon <= 1.0)) {
    throw std::invalid_argument("designated_trigger: epsilon outside (0, 1]");
  }
  Rng rng = make_rng(seed, {0x6368697270ULL});
  const double f0 = uniform_real(rng, 1800.0, 2400.0);
  const double f1 = uniform_real(rng, 2600.0, 3400.0);
  const double vib_rate = uniform_real(rng, 5.0, 7.0);
  const double vib_depth = uniform_real(rng, 20.0, 60.0);
  const double dur = static_cast<double>(length) / sample_rate;
  const std::size_t fade = std::min<std::size_t>(length / 2, sample_rate / 100);
  std::vector<double> s(length);
  double phase = 0.0;
  double peak = 0.0;
  for (std::size_t i = 0; i < length; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    const double f = f0 + (f1 - f0) * (t / dur) +
                     vib_depth * std::sin(2.0 * std::numbers::pi * vib_rate * t);
    phase += 2.0 * std::numbers::pi * f / sample_rate;
    double env = 1.0;
    if (fade > 0 && i < fade) env = 0.5 - 0.5 * std::cos(std::numbers::pi * i / fade);
    if (fade > 0 && length - 1 - i < fade) {
      env = 0.5 - 0.5 * std::cos(std::numbers::pi * (length - 1 - i) / fade);
    }
    s[i] = env * std::sin(phase);
    peak = std::max(peak, std::abs(s[i]));
  }
  for (double& v : s) v = peak > 0.0 ? v * epsilon / peak : 0.0;
  // Rounding can leave the peak a hair above epsilon.
  ag::clip_inplace<double>(s, -epsilon, epsilon);

  Trigger t;
  t.delta = Waveform(std::move(s), sample_rate);
  t.epsilon = epsilon;
  t.target_name = target_name;
  t.target_label = target_label;
  t.record.kind = "designated-chirp";
  t.record.seed = seed;
  t.validate();
  return t;
}

}  // namespace bdlab
