#include "bdlab/model/training.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "bdlab/autograd/adam.h"
#include "bdlab/util/digest.h"
#include "bdlab/util/random.h"

namespace bdlab {

using nlohmann::json;
namespace {

constexpr int kEvalBatch = 128;

void softmax_rows(const ag::Tensor<float>& logits, int rows, int k,
                  std::vector<double>* out) {
  out->resize(static_cast<std::size_t>(rows) * k);
  for (int n = 0; n < rows; ++n) {
    const float* l = logits.ptr() + static_cast<std::size_t>(n) * k;
    double mx = l[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(l[j]));
    double z = 0;
    for (int j = 0; j < k; ++j) z += std::exp(l[j] - mx);
    for (int j = 0; j < k; ++j) {
      (*out)[static_cast<std::size_t>(n) * k + j] = std::exp(l[j] - mx) / z;
    }
  }
}

ag::Tensor<float> forward_logits(const NetworkModel& model,
                                 const ag::Tensor<float>& inputs,
                                 const std::string& tap = "logits") {
  const int n = inputs.dim(0);
  ag::Tensor<float> result;
  std::vector<float> all;
  for (int start = 0; start < n; start += kEvalBatch) {
    const int len = std::min(kEvalBatch, n - start);
    const std::size_t row = inputs.size() / static_cast<std::size_t>(n);
    ag::Tensor<float> chunk({len, inputs.dim(1), inputs.dim(2), inputs.dim(3)},
                            std::vector<float>(inputs.ptr() + start * row,
                                               inputs.ptr() + (start + len) * row));
    ag::Graph<float> g;
    const auto vars = model.bind(g, false);
    const auto x = g.leaf(std::move(chunk));
    const auto out = model.forward(g, x, vars);
    auto it = out.taps.find(tap);
    if (it == out.taps.end()) {
      throw std::out_of_range("unknown layer '" + tap + "'");
    }
    const ag::Tensor<float>& v = g.value(it->second);
    all.insert(all.end(), v.data().begin(), v.data().end());
    if (start + len >= n) {
      ag::Shape shape = v.shape();
      shape[0] = n;
      result = ag::Tensor<float>(shape, std::move(all));
    }
  }
  return result;
}

}  // namespace

ag::Tensor<float> FeatureSet::gather(std::span<const std::size_t> rows) const {
  const std::size_t row = inputs.size() / labels.size();
  std::vector<float> out;
  out.reserve(rows.size() * row);
  for (std::size_t r : rows) {
    out.insert(out.end(), inputs.ptr() + r * row, inputs.ptr() + (r + 1) * row);
  }
  return ag::Tensor<float>({static_cast<int>(rows.size()), 1, inputs.dim(2), inputs.dim(3)},
                           std::move(out));
}

ag::Tensor<float> to_input(const FeatureTensor& f) {
  return ag::Tensor<float>({1, 1, f.n_mfcc, f.n_frames},
                           std::vector<float>(f.values.begin(), f.values.end()));
}

FeatureSet make_feature_set(const LabeledDataset& d, const MfccConfig& cfg) {
  if (d.empty()) throw std::invalid_argument("make_feature_set: empty dataset");
  const auto ex = shared_extractor(cfg);
  const int frames = cfg.num_frames(d.nominal_length());
  const std::size_t row = static_cast<std::size_t>(cfg.n_mfcc) * frames;
  std::vector<float> values(d.size() * row);
  FeatureSet fs;
  fs.labels.resize(d.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < d.size(); ++i) {
    const FeatureTensor f = ex->compute(d[i].wave.samples());
    std::copy(f.values.begin(), f.values.end(), values.begin() + i * row);
    fs.labels[i] = d[i].label;
  }
  fs.inputs = ag::Tensor<float>({static_cast<int>(d.size()), 1, cfg.n_mfcc, frames},
                                std::move(values));
  return fs;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (!(learning_rate > 0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (patience < 0) throw std::invalid_argument("TrainConfig: patience must be >= 0");
}

std::string TrainConfig::describe() const {
  std::ostringstream os;
  os.precision(17);
  os << "train{epochs=" << epochs << ",batch=" << batch_size
     << ",lr=" << learning_rate << ",seed=" << seed << ",patience=" << patience
     << ",loss=cross-entropy,opt=adam(0.9,0.999,1e-8)}";
  return os.str();
}

NetworkModel build_model(const ArchSpec& arch,
                         const std::vector<std::string>& vocabulary,
                         std::uint64_t seed) {
  return NetworkModel(arch, vocabulary, seed);
}

std::string model_digest(const NetworkModel& model) {
  Digest d;
  d.update(model.arch().digest());
  for (const auto& v : model.vocabulary()) d.update(v);
  for (const auto& p : model.params()) {
    d.update(p.name);
    d.update(p.value.data());
  }
  d.update(std::span<const float>(model.prune_mask()));
  return d.hex();
}

int argmax(std::span<const double> p) {
  int best = 0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i] > p[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

std::vector<double> predict_batch(const NetworkModel& model,
                                  const ag::Tensor<float>& inputs) {
  const ag::Tensor<float> logits = forward_logits(model, inputs);
  std::vector<double> probs;
  softmax_rows(logits, inputs.dim(0), model.num_classes(), &probs);
  return probs;
}

std::vector<double> predict(const NetworkModel& model, const FeatureTensor& f) {
  return predict_batch(model, to_input(f));
}

std::vector<int> predict_labels(const NetworkModel& model,
                                const ag::Tensor<float>& inputs) {
  const std::vector<double> probs = predict_batch(model, inputs);
  const int k = model.num_classes();
  std::vector<int> out(static_cast<std::size_t>(inputs.dim(0)));
  for (std::size_t n = 0; n < out.size(); ++n) {
    out[n] = argmax(std::span<const double>(probs).subspan(n * k, k));
  }
  return out;
}

double accuracy(const NetworkModel& model, const FeatureSet& data) {
  if (data.size() == 0) throw std::invalid_argument("accuracy: empty set");
  const std::vector<int> pred = predict_labels(model, data.inputs);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == data.labels[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

double mean_loss(const NetworkModel& model, const FeatureSet& data) {
  const std::vector<double> probs = predict_batch(model, data.inputs);
  const int k = model.num_classes();
  double total = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    total -= std::log(std::max(probs[i * k + data.labels[i]], 1e-300));
  }
  return total / static_cast<double>(data.size());
}

TrainHistory train(NetworkModel& model, const FeatureSet& data,
                   const TrainConfig& cfg, const FeatureSet* validation) {
  cfg.validate();
  if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
  for (int y : data.labels) {
    if (y < 0 || y >= model.num_classes()) {
      throw std::out_of_range("train: label " + std::to_string(y) +
                              " outside vocabulary");
    }
  }
  const bool early_stop = cfg.patience > 0 && validation && validation->size() > 0;

  TrainHistory hist;
  auto record = [&](int epoch, double loss) {
    EpochStats s{epoch, loss, accuracy(model, data), -1.0};
    if (validation && validation->size() > 0) s.val_accuracy = accuracy(model, *validation);
    hist.epochs.push_back(s);
    return s;
  };
  record(0, mean_loss(model, data));

  ag::AdamState<float> adam;
  auto& params = model.params();
  std::vector<ag::Tensor<float>*> pptr;
  for (auto& p : params) pptr.push_back(&p.value);

  NetworkModel best = model;
  double best_val = -1.0;
  int since_best = 0;
  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_rng(cfg.seed, {0x65706f6368ULL, static_cast<std::uint64_t>(epoch)});
    shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t len = std::min<std::size_t>(cfg.batch_size, n - start);
      std::span<const std::size_t> rows(order.data() + start, len);
      std::vector<int> targets;
      for (std::size_t r : rows) targets.push_back(data.labels[r]);

      ag::Graph<float> g;
      const auto vars = model.bind(g, true);
      const auto x = g.leaf(data.gather(rows));
      const auto out = model.forward(g, x, vars);
      const auto loss = g.nll(g.log_softmax(out.logits), std::move(targets));
      g.backward(loss);
      std::vector<ag::Tensor<float>> grads;
      grads.reserve(vars.size());
      for (const auto& v : vars) grads.push_back(g.grad(v));
      std::vector<const ag::Tensor<float>*> gptr;
      for (const auto& t : grads) gptr.push_back(&t);
      ag::adam_step<float>(pptr, gptr, adam, cfg.learning_rate);
      loss_sum += static_cast<double>(g.value(loss).item()) * static_cast<double>(len);
    }
    const EpochStats s = record(epoch, loss_sum / static_cast<double>(n));

    if (early_stop) {
      if (s.val_accuracy > best_val) {
        best_val = s.val_accuracy;
        best = model;
        hist.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        break;
      }
    }
  }
  if (early_stop && hist.best_epoch >= 0 && hist.best_epoch != hist.epochs.back().epoch) {
    model = best;
    // Keep the history consistent with the restored weights.
    EpochStats s = hist.epochs[static_cast<std::size_t>(hist.best_epoch)];
    s.epoch = hist.epochs.back().epoch + 1;
    s.accuracy = accuracy(model, data);
    hist.epochs.push_back(s);
  } else if (!early_stop) {
    hist.best_epoch = hist.epochs.back().epoch;
  }
  return hist;
}

TrainHistory train(NetworkModel& model, const LabeledDataset& data,
                   const MfccConfig& features, const TrainConfig& cfg,
                   const LabeledDataset* validation) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  const FeatureSet fs = make_feature_set(data, features);
  if (validation && !validation->empty()) {
    const FeatureSet vs = make_feature_set(*validation, features);
    return train(model, fs, cfg, &vs);
  }
  return train(model, fs, cfg, nullptr);
}

ag::Tensor<float> activations_batch(const NetworkModel& model,
                                    const ag::Tensor<float>& inputs,
                                    const std::string& layer) {
  return forward_logits(model, inputs, layer);
}

ag::Tensor<float> activations(const NetworkModel& model, const FeatureTensor& f,
                              const std::string& layer) {
  ag::Tensor<float> a = activations_batch(model, to_input(f), layer);
  ag::Shape s(a.shape().begin() + 1, a.shape().end());
  return a.reshaped(s);
}

// ---- checkpoints -----------------------------------------------------------

void save_checkpoint(const NetworkModel& model, const std::filesystem::path& path,
                     const std::string& feature_config,
                     const std::string& provenance) {
  const ArchSpec& a = model.arch();
  json j;
  j["format"] = "bdlab-checkpoint";
  j["schema_version"] = 1;
  j["arch"] = {{"id", a.id},
               {"n_mfcc", a.n_mfcc},
               {"n_frames", a.n_frames},
               {"num_classes", a.num_classes},
               {"conv_channels", a.conv_channels},
               {"dense_width", a.dense_width}};
  j["arch_digest"] = a.digest();
  j["vocabulary"] = model.vocabulary();
  j["feature_config"] = feature_config;
  j["provenance"] = provenance;
  j["prune_mask"] = model.prune_mask();
  json tensors = json::object();
  for (const auto& p : model.params()) {
    tensors[p.name] = {{"shape", p.value.shape()}, {"values", p.value.vector()}};
  }
  j["tensors"] = tensors;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  const json j = json::parse(in);
  if (j.value("format", "") != "bdlab-checkpoint" || j.value("schema_version", 0) != 1) {
    throw std::runtime_error(path.string() + ": not a version-1 checkpoint");
  }
  const json& ja = j.at("arch");
  ArchSpec a{ja.at("id").get<std::string>(),       ja.at("n_mfcc").get<int>(),
             ja.at("n_frames").get<int>(),         ja.at("num_classes").get<int>(),
             ja.at("conv_channels").get<std::vector<int>>(), ja.at("dense_width").get<int>()};
  if (a.digest() != j.at("arch_digest").get<std::string>()) {
    throw std::runtime_error(path.string() + ": architecture digest mismatch");
  }
  NetworkModel model(a, j.at("vocabulary").get<std::vector<std::string>>(), 0);
  for (auto& p : model.params()) {
    const json& t = j.at("tensors").at(p.name);
    const auto shape = t.at("shape").get<ag::Shape>();
    if (shape != p.value.shape()) {
      throw std::runtime_error(path.string() + ": shape mismatch for " + p.name);
    }
    p.value = ag::Tensor<float>(shape, t.at("values").get<std::vector<float>>());
  }
  model.set_prune_mask(j.at("prune_mask").get<std::vector<float>>());
  return Checkpoint{std::move(model), j.value("feature_config", ""),
                    j.value("provenance", "")};
}

void save_history(const TrainHistory& h, const std::filesystem::path& path,
                  const std::string& config_digest) {
  json j;
  j["schema_version"] = 1;
  if (!config_digest.empty()) j["config_digest"] = config_digest;
  j["best_epoch"] = h.best_epoch;
  json rows = json::array();
  for (const auto& e : h.epochs) {
    rows.push_back({{"epoch", e.epoch},
                    {"loss", e.loss},
                    {"accuracy", e.accuracy},
                    {"val_accuracy", e.val_accuracy}});
  }
  j["epochs"] = rows;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

}  // namespace bdlab
