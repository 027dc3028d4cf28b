#ifndef BDLAB_ATTACK_TRIGGER_H_
#define BDLAB_ATTACK_TRIGGER_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bdlab/data/dataset.h"
#include "bdlab/dsp/waveform.h"
#include "bdlab/features/mfcc.h"
#include "bdlab/model/network.h"

namespace bdlab {

struct TriggerGenConfig {
  double epsilon = 0.05;
  // Unset means half the host duration.
  std::optional<double> duration_s;
  int epochs = 1000;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  bool noise_aware = false;
  double noise_snr_lo_db = 10.0;
  double noise_snr_hi_db = 30.0;
  // 1 reproduces per-sample updates; larger values average the gradient over
  // that many consecutive visits before each Adam step.
  int batch_size = 1;

  void validate() const;
  std::string describe() const;
  std::size_t length(int sample_rate, std::size_t host_length) const;
};

struct TriggerRecord {
  std::string kind = "optimized";  // or "designated-chirp"
  int epochs = 0;
  double learning_rate = 0.0;
  std::uint64_t seed = 0;
  bool noise_aware = false;
  double noise_snr_lo_db = 0.0;
  double noise_snr_hi_db = 0.0;
  int batch_size = 1;
  std::string surrogate_digest;
  std::string config_digest;  // experiment config that produced it, if any
  // Mean target loss over the visits of each epoch, taken while delta moves.
  // In mini-batch mode each entry is the mean of the batch losses.
  std::vector<double> loss_curve;
  // Mean target loss of the initial and final delta on one fixed pass
  // (seeded positions, no noise). NaN when not measured.
  double eval_loss_initial = std::numeric_limits<double>::quiet_NaN();
  double eval_loss_final = std::numeric_limits<double>::quiet_NaN();
};

struct Trigger {
  Waveform delta;
  double epsilon = 0.05;
  std::string target_name;
  int target_label = -1;  // index in the vocabulary it was generated against
  TriggerRecord record;

  std::size_t length() const { return delta.size(); }
  // Throws if max |delta| > epsilon or epsilon is outside (0, 1].
  void validate() const;
  std::string digest() const;
};

// Writes `wav_path` (16-bit PCM, for listening) and a JSON sidecar with the
// same stem holding the exact samples and the generation record.
void save_trigger(const Trigger& t, const std::filesystem::path& wav_path);
// Reads the sidecar next to `wav_path`; the WAV itself is not consulted.
Trigger load_trigger(const std::filesystem::path& wav_path);
std::filesystem::path trigger_sidecar(const std::filesystem::path& wav_path);

// One host visit of the trigger objective.
struct TriggerVisit {
  std::span<const double> host;
  std::size_t tau = 0;
  std::vector<double> noise;  // already scaled; empty for none
};

struct TriggerObjective {
  double loss = 0.0;          // mean cross-entropy toward the target
  std::vector<double> grad;   // d loss / d delta
};

// Cross-entropy toward `target` of clip(host + delta@tau + noise, -1, 1)
// through MFCC and the network, averaged over `visits`, with its exact
// gradient with respect to delta.
template <typename T>
TriggerObjective trigger_objective(const Network<T>& model,
                                   const MfccExtractor& features,
                                   std::span<const TriggerVisit> visits,
                                   std::span<const double> delta, int target);

// Projected Adam on delta over the surrogate set, positions redrawn per
// visit. `bank` is required when cfg.noise_aware.
Trigger generate_trigger(const NetworkModel& surrogate,
                         const LabeledDataset& d_sur, int target,
                         const TriggerGenConfig& cfg,
                         const MfccConfig& features = {},
                         const NoiseBank* bank = nullptr);

// Mean target loss of `delta` on d_sur with positions drawn from `seed`.
double trigger_eval_loss(const NetworkModel& surrogate,
                         const LabeledDataset& d_sur, int target,
                         std::span<const double> delta, std::uint64_t seed,
                         const MfccConfig& features = {});

// Seeded whistle-like chirp with peak epsilon, the designated trigger of the
// static and dynamic baselines.
Trigger designated_trigger(std::size_t length, int sample_rate, double epsilon,
                           std::uint64_t seed, const std::string& target_name,
                           int target_label);

}  // namespace bdlab

#endif  // BDLAB_ATTACK_TRIGGER_H_
