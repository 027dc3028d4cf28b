#ifndef BDLAB_CLI_CONFIG_H_
#define BDLAB_CLI_CONFIG_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "bdlab/attack/poison.h"
#include "bdlab/attack/trigger.h"
#include "bdlab/data/dataset.h"
#include "bdlab/defense/defenses.h"
#include "bdlab/dsp/mixing.h"
#include "bdlab/features/mfcc.h"
#include "bdlab/model/training.h"

namespace bdlab {

// Every problem found while reading or validating a config, one per field.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

struct DataSection {
  std::string source = "synth";  // or "dir"
  std::optional<std::filesystem::path> root;
  SynthConfig synth;
  std::vector<std::string> victim_classes = {"w0", "w1", "w2", "w3"};
  std::vector<std::string> aux_classes = {"w4", "w5", "w6", "w7"};
  std::uint64_t split_seed = 1;
  std::optional<std::filesystem::path> noise_dir;
  NoiseBankOptions noise;
};

struct ModelSection {
  std::string arch;
  std::uint64_t build_seed = 0;
  TrainConfig train;
};

// Desk-scale training defaults: Adam at 1e-3, batch 32.
inline TrainConfig desk_train(int epochs, std::uint64_t seed) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 32;
  t.learning_rate = 1e-3;
  t.seed = seed;
  return t;
}

struct TriggerSection {
  std::string kind = "optimized";  // or "designated"
  TriggerGenConfig gen = desk_trigger();

  static TriggerGenConfig desk_trigger() {
    TriggerGenConfig g;
    g.epochs = 3;
    g.seed = 9;
    return g;
  }
};

struct PoisonSection {
  double rate = 0.7;
  double snr_db = 30.0;
  bool noise_augmented = false;
  PoisonOptions options;
  std::uint64_t seed = 5;
};

struct EvalSection {
  PositionPolicy policy = PositionPolicy::kRandom;
  std::size_t fixed_tau = 0;
  double snr_db = 30.0;
  std::uint64_t seed = 77;
  bool compare_clean = true;  // also train an unpoisoned victim
  bool class_wise = false;    // one full attack per victim class
  std::optional<ChannelConfig> channel;
};

struct DefenseSection {
  bool enabled = false;
  std::vector<double> filter_ratios = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  bool filter_random = false;
  std::uint64_t filter_seed = 13;
  std::vector<double> prune_ratios = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  int strip_overlays = kDefaultStripOverlays;
  double strip_fpr = 0.05;
  std::uint64_t strip_seed = 17;
  std::size_t strip_samples = 64;  // per side; 0 means all
  bool beatrix = true;
};

struct ChannelSection {
  bool enabled = false;
  std::vector<double> distances_m = {1.0, 2.0, 4.0};
  std::vector<double> noise_snr_db = {40.0, 30.0, 20.0};
  double reference_distance_m = 1.0;
  std::uint64_t seed = 19;
};

// Dotted config key and the values it takes; the grid is the cartesian
// product of all axes.
struct SweepAxis {
  std::string key;
  std::vector<nlohmann::json> values;
};

struct ExperimentConfig {
  std::string target;
  std::filesystem::path output_dir = "runs/default";
  DataSection data;
  MfccConfig features;
  ModelSection surrogate{"small-cnn", 5, desk_train(8, 2)};
  ModelSection victim{"small-cnn", 6, desk_train(15, 3)};
  TriggerSection trigger;
  PoisonSection poison;
  EvalSection eval;
  DefenseSection defense;
  ChannelSection channel;
  std::vector<SweepAxis> sweep;

  // Reads a config object; unknown keys and invalid values are collected
  // and thrown together as ConfigError.
  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  // Throws ConfigError listing every offending field.
  void validate() const;
  // Hash of the resolved config without the output directory and sweep grid.
  std::string digest() const;
  // Replaces every seed with one derived from `seed` and the field name.
  void override_seed(std::uint64_t seed);
};

ExperimentConfig load_config(const std::filesystem::path& path);
// The paper's defaults at desk scale, with `target` filled in.
ExperimentConfig default_config(const std::string& target = "w0");

// Sets the dotted key in a config JSON object; the key must already exist.
void set_config_key(nlohmann::json& j, const std::string& dotted, const nlohmann::json& value);

}  // namespace bdlab

#endif  // BDLAB_CLI_CONFIG_H_
