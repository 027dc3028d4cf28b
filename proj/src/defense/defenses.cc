#include "bdlab/defense/defenses.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

#include "bdlab/util/random.h"

namespace bdlab {

using nlohmann::json;

namespace {

double median_of(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty set");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

void write_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(1) << "\n";
}

}  // namespace

// ---- filter ------------------------------------------------------------------

std::vector<std::size_t> filter_kept_indices(std::size_t n, double f, bool random,
                                             std::uint64_t seed) {
  if (!(f >= 0.0 && f < 1.0)) throw std::invalid_argument("filter: ratio must lie in [0, 1)");
  const auto k = static_cast<std::size_t>(std::llround((1.0 - f) * static_cast<double>(n)));
  if (k == 0) throw std::invalid_argument("filter: nothing left after filtering");
  std::vector<std::size_t> keep(k);
  if (!random) {
    for (std::size_t j = 0; j < k; ++j) keep[j] = j * n / k;
    return keep;
  }
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  Rng rng = make_rng(seed, {0x66696c746572ULL});
  // Partial Fisher-Yates: the first k slots become a uniform k-subset.
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(
        uniform_int(rng, static_cast<std::int64_t>(i), static_cast<std::int64_t>(n - 1)));
    std::swap(all[i], all[j]);
  }
  std::copy(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), keep.begin());
  std::sort(keep.begin(), keep.end());
  return keep;
}

Waveform filter_defense(const Waveform& x, double f, bool random, std::uint64_t seed) {
  const auto keep = filter_kept_indices(x.size(), f, random, seed);
  std::vector<double> out;
  out.reserve(keep.size());
  for (std::size_t i : keep) out.push_back(x[i]);
  return Waveform(std::move(out), x.sample_rate());
}

LabeledDataset filter_dataset(const LabeledDataset& d, double f, bool random,
                              std::uint64_t seed) {
  LabeledDataset out = d;
  for (std::size_t i = 0; i < d.size(); ++i) {
    out.replace_wave(i, filter_defense(d[i].wave, f, random, derive_seed(seed, {i}))
                            .resized(d.nominal_length()));
  }
  return out;
}

// ---- fine-pruning --------------------------------------------------------------

std::vector<double> channel_activity(const NetworkModel& model, const FeatureSet& benign) {
  if (benign.size() == 0) throw std::invalid_argument("fine_prune: empty benign set");
  const ag::Tensor<float> act =
      activations_batch(model, benign.inputs, model.arch().last_conv_layer());
  const int n = act.dim(0);
  const int c = act.dim(1);
  const std::size_t plane = act.size() / (static_cast<std::size_t>(n) * c);
  std::vector<double> mean(static_cast<std::size_t>(c), 0.0);
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const float* p = act.ptr() + (static_cast<std::size_t>(i) * c + ch) * plane;
      double s = 0.0;
      for (std::size_t k = 0; k < plane; ++k) s += std::abs(p[k]);
      mean[static_cast<std::size_t>(ch)] += s;
    }
  }
  for (double& m : mean) m /= static_cast<double>(n) * static_cast<double>(plane);
  return mean;
}

std::vector<int> prune_ranking(std::span<const double> activity) {
  std::vector<int> order(activity.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return activity[static_cast<std::size_t>(a)] < activity[static_cast<std::size_t>(b)];
  });
  return order;
}

NetworkModel prune_with_ranking(const NetworkModel& model, std::span<const int> ranking,
                                double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) {
    throw std::invalid_argument("fine_prune: ratio outside [0, 1]");
  }
  std::vector<float> mask = model.prune_mask();
  if (ranking.size() != mask.size()) {
    throw std::invalid_argument("fine_prune: ranking does not cover every channel");
  }
  const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(mask.size())));
  for (std::size_t i = 0; i < k; ++i) mask[static_cast<std::size_t>(ranking[i])] = 0.0f;
  NetworkModel out = model;
  out.set_prune_mask(std::move(mask));
  return out;
}

FinePruneResult fine_prune(const NetworkModel& model, const LabeledDataset& benign,
                           double ratio, const MfccConfig& features) {
  if (benign.empty()) throw std::invalid_argument("fine_prune: empty benign set");
  FinePruneResult r;
  r.report.layer = model.arch().last_conv_layer();
  r.report.mean_activation = channel_activity(model, make_feature_set(benign, features));
  r.report.ranking = prune_ranking(r.report.mean_activation);
  r.model = prune_with_ranking(model, r.report.ranking, ratio);
  r.pruned = static_cast<int>(std::floor(ratio * static_cast<double>(r.report.ranking.size())));
  return r;
}

PruneReport prune_curve(const NetworkModel& model, const LabeledDataset& benign,
                        std::span<const double> ratios, const PruneMetrics& metrics,
                        const MfccConfig& features) {
  FinePruneResult base = fine_prune(model, benign, 0.0, features);
  PruneReport rep = base.report;
  for (double r : ratios) {
    const NetworkModel m = prune_with_ranking(model, rep.ranking, r);
    const auto [ba, asr] = metrics(m);
    rep.curve.push_back({r, ba, asr});
  }
  return rep;
}

// ---- STRIP -------------------------------------------------------------------

double entropy_bits(std::span<const double> p) {
  if (p.empty()) throw std::invalid_argument("entropy of empty distribution");
  double h = 0.0;
  for (double q : p) {
    if (q > 0.0) h -= q * std::log2(q);
  }
  return std::clamp(h, 0.0, std::log2(static_cast<double>(p.size())));
}

namespace {

Waveform blend(const Waveform& x, const Waveform& o) {
  if (o.size() != x.size()) throw std::invalid_argument("STRIP: overlay length mismatch");
  const double ex = x.energy();
  const double eo = o.energy();
  const double s = eo > 0.0 ? std::sqrt(ex / eo) : 0.0;
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] + s * o[i];
  return Waveform::clamped(std::move(v), x.sample_rate());
}

// Mean prediction entropy of each group of `per` consecutive blends.
std::vector<double> grouped_entropy(const NetworkModel& model, const LabeledDataset& blends,
                                    int per, const MfccConfig& features) {
  const FeatureSet fs = make_feature_set(blends, features);
  const std::vector<double> probs = predict_batch(model, fs.inputs);
  const int k = model.num_classes();
  const std::size_t groups = blends.size() / static_cast<std::size_t>(per);
  std::vector<double> out(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    std::vector<double> avg(static_cast<std::size_t>(k), 0.0);
    for (int j = 0; j < per; ++j) {
      const double* p = probs.data() + (g * per + j) * static_cast<std::size_t>(k);
      for (int c = 0; c < k; ++c) avg[static_cast<std::size_t>(c)] += p[c] / per;
    }
    out[g] = entropy_bits(avg);
  }
  return out;
}

}  // namespace

StripVerdict strip_entropy(const NetworkModel& model, const Waveform& x,
                           std::span<const Waveform> overlays, double threshold,
                           const MfccConfig& features) {
  if (overlays.empty()) throw std::invalid_argument("STRIP: no overlays");
  LabeledDataset blends(model.vocabulary(), x.size(), x.sample_rate());
  for (std::size_t i = 0; i < overlays.size(); ++i) {
    blends.add("blend/" + std::to_string(i), blend(x, overlays[i]), 0);
  }
  StripVerdict v;
  v.entropy = grouped_entropy(model, blends, static_cast<int>(overlays.size()), features)[0];
  v.threshold = threshold;
  v.flagged = v.entropy < threshold;
  return v;
}

std::vector<double> strip_entropies(const NetworkModel& model, const LabeledDataset& d,
                                    const LabeledDataset& pool, int count,
                                    std::uint64_t seed, const MfccConfig& features) {
  if (count < 1 || pool.empty()) throw std::invalid_argument("STRIP: no overlays");
  constexpr std::size_t kChunk = 8;
  std::vector<double> out;
  out.reserve(d.size());
  for (std::size_t start = 0; start < d.size(); start += kChunk) {
    const std::size_t len = std::min(kChunk, d.size() - start);
    LabeledDataset blends(model.vocabulary(), d.nominal_length(), d.sample_rate());
    for (std::size_t i = start; i < start + len; ++i) {
      Rng rng = make_rng(seed, {0x7374726970ULL, i});
      for (int j = 0; j < count; ++j) {
        std::size_t pick = static_cast<std::size_t>(
            uniform_int(rng, 0, static_cast<std::int64_t>(pool.size()) - 1));
        if (pool[pick].id == d[i].id && pool.size() > 1) pick = (pick + 1) % pool.size();
        blends.add(d[i].id, blend(d[i].wave, pool[pick].wave), 0);
      }
    }
    const auto h = grouped_entropy(model, blends, count, features);
    out.insert(out.end(), h.begin(), h.end());
  }
  return out;
}

double strip_threshold(std::vector<double> benign_entropies, double fpr) {
  if (benign_entropies.empty()) throw std::invalid_argument("STRIP: no benign entropies");
  if (!(fpr >= 0.0 && fpr < 1.0)) throw std::invalid_argument("STRIP: fpr outside [0, 1)");
  std::sort(benign_entropies.begin(), benign_entropies.end());
  const auto k = static_cast<std::size_t>(
      std::floor(fpr * static_cast<double>(benign_entropies.size())));
  return benign_entropies[k];
}

Histogram histogram(std::span<const double> v, double lo, double hi, int bins) {
  if (bins < 1 || !(hi > lo)) throw std::invalid_argument("histogram: bad range");
  Histogram h{lo, hi, std::vector<std::size_t>(static_cast<std::size_t>(bins), 0)};
  for (double x : v) {
    auto b = static_cast<long>(std::floor((x - lo) / (hi - lo) * bins));
    b = std::clamp(b, 0L, static_cast<long>(bins) - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

// ---- anomaly index -------------------------------------------------------------

std::vector<double> anomaly_index(std::span<const double> d) {
  if (d.empty()) throw std::invalid_argument("anomaly_index: empty deviations");
  const std::vector<double> v(d.begin(), d.end());
  const double med = median_of(v);
  std::vector<double> absdev(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) absdev[i] = std::abs(v[i] - med);
  const double mad = median_of(absdev);
  const double denom = kMadScale * std::max(mad, kMadFloor);
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) r[i] = absdev[i] / denom;
  return r;
}

std::vector<double> gram_features(std::span<const float> map, int channels, int spatial) {
  if (map.size() != static_cast<std::size_t>(channels) * spatial) {
    throw std::invalid_argument("gram_features: map size mismatch");
  }
  const std::size_t c = static_cast<std::size_t>(channels);
  const std::size_t s = static_cast<std::size_t>(spatial);
  const std::size_t tri = c * (c + 1) / 2;
  std::vector<double> out(2 * tri);
  std::vector<double> sq(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) sq[i] = static_cast<double>(map[i]) * map[i];
  std::size_t k = 0;
  for (std::size_t a = 0; a < c; ++a) {
    for (std::size_t b = a; b < c; ++b, ++k) {
      double g1 = 0.0;
      double g2 = 0.0;
      for (std::size_t t = 0; t < s; ++t) {
        g1 += static_cast<double>(map[a * s + t]) * map[b * s + t];
        g2 += sq[a * s + t] * sq[b * s + t];
      }
      out[k] = g1;
      out[tri + k] = std::sqrt(g2);
    }
  }
  return out;
}

AnomalyReport beatrix_index(const NetworkModel& model, const LabeledDataset& benign,
                            const LabeledDataset& suspects, const MfccConfig& features) {
  const int k = model.num_classes();
  for (int c = 0; c < k; ++c) {
    if (benign.count(c) < 2) {
      throw std::invalid_argument("beatrix: class '" + model.vocabulary()[static_cast<std::size_t>(c)] +
                                  "' has fewer than 2 benign samples");
    }
  }
  const std::string layer = model.arch().last_conv_layer();
  auto features_of = [&](const LabeledDataset& d, std::vector<int>* pred) {
    const FeatureSet fs = make_feature_set(d, features);
    if (pred) *pred = predict_labels(model, fs.inputs);
    const ag::Tensor<float> act = activations_batch(model, fs.inputs, layer);
    const int n = act.dim(0);
    const int ch = act.dim(1);
    const int sp = static_cast<int>(act.size() / (static_cast<std::size_t>(n) * ch));
    std::vector<std::vector<double>> out(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
      out[static_cast<std::size_t>(i)] = gram_features(
          std::span<const float>(act.ptr() + static_cast<std::size_t>(i) * ch * sp,
                                 static_cast<std::size_t>(ch) * sp),
          ch, sp);
    }
    return out;
  };

  const auto bf = features_of(benign, nullptr);
  const std::size_t dim = bf.front().size();
  std::vector<std::vector<double>> lo(static_cast<std::size_t>(k),
                                      std::vector<double>(dim, INFINITY));
  std::vector<std::vector<double>> hi(static_cast<std::size_t>(k),
                                      std::vector<double>(dim, -INFINITY));
  for (std::size_t i = 0; i < bf.size(); ++i) {
    const auto c = static_cast<std::size_t>(benign[i].label);
    for (std::size_t j = 0; j < dim; ++j) {
      lo[c][j] = std::min(lo[c][j], bf[i][j]);
      hi[c][j] = std::max(hi[c][j], bf[i][j]);
    }
  }

  AnomalyReport rep;
  rep.vocabulary = model.vocabulary();
  rep.threshold = std::exp(2.0);
  rep.deviation.assign(static_cast<std::size_t>(k), 0.0);
  rep.suspects.assign(static_cast<std::size_t>(k), 0);
  if (!suspects.empty()) {
    std::vector<int> pred;
    const auto sf = features_of(suspects, &pred);
    std::vector<std::vector<double>> per_class(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < sf.size(); ++i) {
      const auto c = static_cast<std::size_t>(pred[i]);
      double dev = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double range = hi[c][j] - lo[c][j] + 1e-6;
        const double g = sf[i][j];
        dev += (std::max(0.0, lo[c][j] - g) + std::max(0.0, g - hi[c][j])) / range;
      }
      per_class[c].push_back(dev / static_cast<double>(dim));
    }
    for (int c = 0; c < k; ++c) {
      const auto& v = per_class[static_cast<std::size_t>(c)];
      rep.suspects[static_cast<std::size_t>(c)] = v.size();
      if (!v.empty()) rep.deviation[static_cast<std::size_t>(c)] = median_of(v);
    }
  }
  rep.anomaly_index = anomaly_index(rep.deviation);
  for (double r : rep.anomaly_index) rep.flagged.push_back(r > rep.threshold);
  return rep;
}

// ---- reports -------------------------------------------------------------------

void save_prune_report(const PruneReport& r, const std::filesystem::path& path,
                       const std::string& config_digest) {
  json curve = json::array();
  for (const auto& p : r.curve) curve.push_back({{"ratio", p.ratio}, {"ba", p.ba}, {"asr", p.asr}});
  write_json({{"format", "bdlab-prune-report"},
              {"schema_version", 1},
              {"config_digest", config_digest},
              {"layer", r.layer},
              {"ranking", r.ranking},
              {"mean_activation", r.mean_activation},
              {"curve", curve}},
             path);
}

void save_strip_report(const std::vector<double>& benign, const std::vector<double>& poisoned,
                       double threshold, double detection_rate,
                       const std::filesystem::path& path, int bins,
                       const std::string& config_digest) {
  double hi = 0.0;
  for (double v : benign) hi = std::max(hi, v);
  for (double v : poisoned) hi = std::max(hi, v);
  hi = std::max(hi, 1e-9);
  const Histogram hb = histogram(benign, 0.0, hi, bins);
  const Histogram hp = histogram(poisoned, 0.0, hi, bins);
  write_json({{"format", "bdlab-strip-report"},
              {"schema_version", 1},
              {"config_digest", config_digest},
              {"threshold", std::isfinite(threshold) ? json(threshold) : json(nullptr)},
              {"detection_rate", detection_rate},
              {"histogram", {{"lo", 0.0}, {"hi", hi}, {"benign", hb.counts}, {"poisoned", hp.counts}}},
              {"benign_entropy", benign},
              {"poisoned_entropy", poisoned}},
             path);
}

void save_anomaly_report(const AnomalyReport& r, const std::filesystem::path& path,
                         const std::string& config_digest) {
  json rows = json::array();
  for (std::size_t c = 0; c < r.vocabulary.size(); ++c) {
    rows.push_back({{"class", r.vocabulary[c]},
                    {"deviation", r.deviation[c]},
                    {"anomaly_index", r.anomaly_index[c]},
                    {"suspects", r.suspects[c]},
                    {"flagged", static_cast<bool>(r.flagged[c])}});
  }
  write_json({{"format", "bdlab-anomaly-report"},
              {"schema_version", 1},
              {"config_digest", config_digest},
              {"threshold", r.threshold},
              {"classes", rows}},
             path);
}

}  // namespace bdlab
