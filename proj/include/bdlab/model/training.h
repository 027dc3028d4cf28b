#ifndef BDLAB_MODEL_TRAINING_H_
#define BDLAB_MODEL_TRAINING_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bdlab/data/dataset.h"
#include "bdlab/features/mfcc.h"
#include "bdlab/model/network.h"

namespace bdlab {

// MFCCs of a whole dataset, stacked as (N, 1, n_mfcc, n_frames) floats.
struct FeatureSet {
  ag::Tensor<float> inputs;
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
  int n_mfcc() const { return inputs.dim(2); }
  int n_frames() const { return inputs.dim(3); }
  // (n, 1, H, W) slice of the rows in `rows`.
  ag::Tensor<float> gather(std::span<const std::size_t> rows) const;
};

FeatureSet make_feature_set(const LabeledDataset& d, const MfccConfig& cfg);
ag::Tensor<float> to_input(const FeatureTensor& f);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 64;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  int patience = 0;  // 0 disables early stopping (needs a validation set)

  void validate() const;
  std::string describe() const;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;      // epoch 0: evaluation loss at initialisation
  double accuracy = 0.0;  // training-set accuracy with end-of-epoch weights
  double val_accuracy = -1.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;
};

// Mini-batch cross-entropy with Adam; the batch order of epoch e is a pure
// function of (cfg.seed, e).
TrainHistory train(NetworkModel& model, const FeatureSet& data,
                   const TrainConfig& cfg,
                   const FeatureSet* validation = nullptr);
TrainHistory train(NetworkModel& model, const LabeledDataset& data,
                   const MfccConfig& features, const TrainConfig& cfg,
                   const LabeledDataset* validation = nullptr);

// Hash of arch, vocabulary, parameters and prune mask.
std::string model_digest(const NetworkModel& model);

NetworkModel build_model(const ArchSpec& arch,
                         const std::vector<std::string>& vocabulary,
                         std::uint64_t seed);

// Lowest index among the maxima.
int argmax(std::span<const double> p);

std::vector<double> predict(const NetworkModel& model, const FeatureTensor& f);
// Row-major (N x K) probabilities.
std::vector<double> predict_batch(const NetworkModel& model,
                                  const ag::Tensor<float>& inputs);
std::vector<int> predict_labels(const NetworkModel& model,
                                const ag::Tensor<float>& inputs);
double accuracy(const NetworkModel& model, const FeatureSet& data);
double mean_loss(const NetworkModel& model, const FeatureSet& data);

ag::Tensor<float> activations(const NetworkModel& model, const FeatureTensor& f,
                              const std::string& layer);
// Batched form; returns (N, ...) activations.
ag::Tensor<float> activations_batch(const NetworkModel& model,
                                    const ag::Tensor<float>& inputs,
                                    const std::string& layer);

// JSON checkpoint: arch + digest, vocabulary, feature config, named tensors.
void save_checkpoint(const NetworkModel& model, const std::filesystem::path& path,
                     const std::string& feature_config = {},
                     const std::string& provenance = {});
struct Checkpoint {
  NetworkModel model;
  std::string feature_config;
  std::string provenance;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

void save_history(const TrainHistory& h, const std::filesystem::path& path,
                  const std::string& config_digest = {});

}  // namespace bdlab

#endif  // BDLAB_MODEL_TRAINING_H_
