#include "bdlab/eval/metrics.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "bdlab/util/digest.h"
#include "bdlab/util/random.h"

namespace bdlab {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::uint64_t id_key(const std::string& id) { return Digest().update(id).value(); }

double fraction_predicted(const NetworkModel& model, const LabeledDataset& d,
                          int label, const MfccConfig& features) {
  const FeatureSet fs = make_feature_set(d, features);
  const std::vector<int> pred = predict_labels(model, fs.inputs);
  std::size_t hit = 0;
  for (int p : pred) hit += p == label;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

double simpson(const std::function<double(double)>& f, double a, double b, double fa,
               double fm, double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double diff = left + right - whole;
  if (depth <= 0 || std::abs(diff) <= 15.0 * tol) return left + right + diff / 15.0;
  return simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

double integrate(const std::function<double(double)>& f, double a, double b) {
  if (a == b) return 0.0;
  // Split into panels so the recursion starts from a reasonable mesh.
  constexpr int kPanels = 16;
  double total = 0.0;
  for (int i = 0; i < kPanels; ++i) {
    const double lo = a + (b - a) * i / kPanels;
    const double hi = a + (b - a) * (i + 1) / kPanels;
    const double flo = f(lo);
    const double fhi = f(hi);
    const double fm = f(0.5 * (lo + hi));
    const double whole = (hi - lo) / 6.0 * (flo + 4.0 * fm + fhi);
    total += simpson(f, lo, hi, flo, fm, fhi, whole, 1e-15, 40);
  }
  return total;
}

// P(T > a) for a >= 0.
double student_t_upper(double a, double df) {
  const double c = std::exp(std::lgamma(0.5 * (df + 1.0)) - std::lgamma(0.5 * df)) /
                   std::sqrt(df * std::numbers::pi);
  const double e = -0.5 * (df + 1.0);
  if (a <= 1.0) {
    auto pdf = [&](double x) { return c * std::pow(1.0 + x * x / df, e); };
    return 0.5 - integrate(pdf, 0.0, a);
  }
  // Substituting x = 1/u keeps the tail on a finite interval; the integrand
  // c * u^(df-1) * (u^2 + 1/df)^e stays finite at u = 0.
  auto g = [&](double u) {
    return c * std::pow(u, df - 1.0) * std::pow(u * u + 1.0 / df, e);
  };
  return integrate(g, 0.0, 1.0 / a);
}

}  // namespace

double benign_accuracy(const NetworkModel& model, const LabeledDataset& test,
                       const MfccConfig& features) {
  if (test.empty()) throw std::invalid_argument("benign_accuracy: empty test set");
  return accuracy(model, make_feature_set(test, features));
}

LabeledDataset triggered_set(const LabeledDataset& test, int target,
                             const Trigger& trigger, const AttackOptions& opts) {
  if (target < 0 || target >= test.num_classes()) {
    throw std::out_of_range("attack: target label outside vocabulary");
  }
  trigger.validate();
  const std::size_t n = test.nominal_length();
  const std::size_t l = trigger.length();
  if (l >= n) throw std::invalid_argument("attack: trigger not shorter than hosts");
  if (opts.policy == PositionPolicy::kFixed && opts.fixed_tau > n - l) {
    throw std::out_of_range("attack: fixed tau out of range");
  }
  if (opts.channel && (opts.bank == nullptr || opts.bank->empty())) {
    throw std::invalid_argument("attack: channel simulation needs a noise bank");
  }
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test[i].label != target) keep.push_back(i);
  }
  if (keep.empty()) {
    throw std::invalid_argument("attack: no non-target samples to evaluate");
  }
  LabeledDataset out = test.subset(keep);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Sample& s = out[i];
    const std::uint64_t key = id_key(s.id);
    std::size_t tau = opts.fixed_tau;
    if (opts.policy == PositionPolicy::kRandom) {
      Rng rng = make_rng(opts.seed, {0x6173727461ULL, key});
      tau = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(n - l)));
    }
    double scale = 1.0;
    if (opts.scale_by_snr) scale = scale_for_snr(s.wave, trigger.delta, opts.snr_db);
    Waveform w = add_trigger(s.wave, trigger.delta, tau, scale);
    if (opts.channel) {
      ChannelConfig c = *opts.channel;
      c.seed = derive_seed(c.seed, {key});
      w = simulate_channel(w, *opts.bank, c);
    }
    out.replace_wave(i, w);
  }
  return out;
}

double attack_success_rate(const NetworkModel& model, const LabeledDataset& test,
                           int target, const Trigger& trigger,
                           const AttackOptions& opts, const MfccConfig& features) {
  return fraction_predicted(model, triggered_set(test, target, trigger, opts), target,
                            features);
}

std::string ClassWiseAsr::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "actual\\target";
  for (const auto& v : vocabulary) os << "," << v;
  os << "\n";
  for (int a = 0; a < size(); ++a) {
    os << vocabulary[static_cast<std::size_t>(a)];
    for (int t = 0; t < size(); ++t) {
      os << ",";
      if (at(a, t)) os << *at(a, t);
    }
    os << "\n";
  }
  return os.str();
}

ClassWiseAsr class_wise_asr(const std::map<int, const NetworkModel*>& models,
                            const LabeledDataset& victim,
                            const std::map<int, Trigger>& triggers,
                            const AttackOptions& opts, const MfccConfig& features) {
  const int k = victim.num_classes();
  ClassWiseAsr m;
  m.vocabulary = victim.vocabulary();
  m.cells.assign(static_cast<std::size_t>(k) * k, std::nullopt);
  for (int t = 0; t < k; ++t) {
    auto tr = triggers.find(t);
    auto md = models.find(t);
    if (tr == triggers.end() || md == models.end() || md->second == nullptr) {
      throw std::invalid_argument("class_wise_asr: no trigger/model for target class " +
                                  victim.vocabulary()[static_cast<std::size_t>(t)]);
    }
    const LabeledDataset trig = triggered_set(victim, t, tr->second, opts);
    const FeatureSet fs = make_feature_set(trig, features);
    const std::vector<int> pred = predict_labels(*md->second, fs.inputs);
    std::vector<std::size_t> hit(static_cast<std::size_t>(k), 0);
    std::vector<std::size_t> tot(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const int a = trig[i].label;
      ++tot[static_cast<std::size_t>(a)];
      hit[static_cast<std::size_t>(a)] += pred[i] == t;
    }
    for (int a = 0; a < k; ++a) {
      if (a == t || tot[static_cast<std::size_t>(a)] == 0) continue;
      m.cells[static_cast<std::size_t>(a) * k + t] =
          static_cast<double>(hit[static_cast<std::size_t>(a)]) /
          static_cast<double>(tot[static_cast<std::size_t>(a)]);
    }
  }
  return m;
}

double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) throw std::invalid_argument("student_t_cdf: df must be positive");
  if (std::isnan(t)) return t;
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  if (t == 0.0) return 0.5;
  const double upper = student_t_upper(std::abs(t), df);
  return t > 0 ? 1.0 - upper : upper;
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_t_test: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("paired_t_test: need at least 2 pairs");
  const std::size_t n = a.size();
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i] - mean;
    ss += d * d;
  }
  TTestResult r;
  r.df = static_cast<int>(n) - 1;
  r.mean_diff = mean;
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0) {
    if (mean == 0.0) return r;  // t = 0, p = 1
    r.t = mean > 0 ? INFINITY : -INFINITY;
    r.p = 0.0;
    return r;
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  r.p = std::min(1.0, 2.0 * student_t_upper(std::abs(r.t), r.df));
  return r;
}

void EvalReport::validate() const {
  if (!(ba >= 0.0 && ba <= 1.0)) throw std::invalid_argument("EvalReport: BA outside [0, 1]");
  if (!(asr >= 0.0 && asr <= 1.0)) throw std::invalid_argument("EvalReport: ASR outside [0, 1]");
  if (class_wise) {
    const int k = class_wise->size();
    if (class_wise->cells.size() != static_cast<std::size_t>(k) * k) {
      throw std::invalid_argument("EvalReport: class-wise matrix is not K x K");
    }
    for (int i = 0; i < k; ++i) {
      if (class_wise->at(i, i)) {
        throw std::invalid_argument("EvalReport: class-wise diagonal must be unavailable");
      }
    }
  }
}

void write_report(const EvalReport& r, const fs::path& path) {
  r.validate();
  json j = {{"format", "bdlab-eval-report"},
            {"schema_version", kReportSchemaVersion},
            {"ba", r.ba},
            {"asr", r.asr},
            {"n_benign", r.n_benign},
            {"n_attack", r.n_attack},
            {"target_name", r.target_name},
            {"extra", r.extra},
            {"config_digest", r.config_digest}};
  if (r.class_wise) {
    json rows = json::array();
    for (int a = 0; a < r.class_wise->size(); ++a) {
      json row = json::array();
      for (int t = 0; t < r.class_wise->size(); ++t) {
        const auto& c = r.class_wise->at(a, t);
        row.push_back(c ? json(*c) : json(nullptr));
      }
      rows.push_back(row);
    }
    j["class_wise"] = {{"vocabulary", r.class_wise->vocabulary}, {"asr", rows}};
    fs::path csv = path;
    csv.replace_extension(".classwise.csv");
    std::ofstream c(csv);
    if (!c) throw std::runtime_error("cannot write " + csv.string());
    c << r.class_wise->to_csv();
  } else {
    j["class_wise"] = nullptr;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(1) << "\n";
}

EvalReport read_report(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  const json j = json::parse(in);
  if (j.value("format", "") != "bdlab-eval-report") {
    throw std::runtime_error(path.string() + ": not an eval report");
  }
  const int version = j.value("schema_version", -1);
  if (version != kReportSchemaVersion) {
    throw std::runtime_error(path.string() + ": schema version " + std::to_string(version) +
                             ", expected " + std::to_string(kReportSchemaVersion));
  }
  EvalReport r;
  r.ba = j.at("ba").get<double>();
  r.asr = j.at("asr").get<double>();
  r.n_benign = j.at("n_benign").get<std::size_t>();
  r.n_attack = j.at("n_attack").get<std::size_t>();
  r.target_name = j.at("target_name").get<std::string>();
  r.extra = j.at("extra").get<std::map<std::string, double>>();
  r.config_digest = j.at("config_digest").get<std::string>();
  if (!j.at("class_wise").is_null()) {
    ClassWiseAsr m;
    m.vocabulary = j["class_wise"].at("vocabulary").get<std::vector<std::string>>();
    for (const auto& row : j["class_wise"].at("asr")) {
      for (const auto& c : row) {
        m.cells.push_back(c.is_null() ? std::nullopt : std::optional<double>(c.get<double>()));
      }
    }
    r.class_wise = std::move(m);
  }
  r.validate();
  return r;
}

}  // namespace bdlab
