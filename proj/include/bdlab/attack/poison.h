#ifndef BDLAB_ATTACK_POISON_H_
#define BDLAB_ATTACK_POISON_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "bdlab/attack/trigger.h"
#include "bdlab/data/dataset.h"

namespace bdlab {

struct SurrogateDataset {
  LabeledDataset data;
  int target_label = -1;
};

// Auxiliary classes keep their order; the target class is appended last.
// Throws when either side is empty, the target side holds more than one
// label, or the target name already names an auxiliary class.
SurrogateDataset build_surrogate_dataset(const LabeledDataset& target_class,
                                         const LabeledDataset& auxiliary);

enum class PositionPolicy { kRandom, kFixed };
const char* policy_name(PositionPolicy p);
PositionPolicy parse_policy(const std::string& s);

struct PoisonOptions {
  PositionPolicy policy = PositionPolicy::kRandom;
  std::size_t fixed_tau = 0;
  // Level of the ambient noise mixed into poisoned samples when a bank is
  // given, drawn uniformly per sample.
  double noise_snr_lo_db = 10.0;
  double noise_snr_hi_db = 30.0;
};

struct PoisonRecord {
  std::string id;
  std::size_t tau = 0;
  double scale = 0.0;
  double snr_db = 0.0;  // snr_db(x, scale * delta), before clamping
  int noise_member = -1;
  double noise_snr_db = std::numeric_limits<double>::quiet_NaN();
};

struct PoisonManifest {
  std::string target_name;
  int target_label = -1;
  double rate = 0.0;
  double snr_db = 0.0;
  bool noise_augmented = false;
  PositionPolicy policy = PositionPolicy::kRandom;
  std::uint64_t seed = 0;
  std::size_t target_count = 0;  // |D_t| in the victim set
  std::size_t host_length = 0;
  std::size_t trigger_length = 0;
  std::string trigger_digest;
  std::string config_digest;
  std::vector<PoisonRecord> records;

  // Throws on rate outside [0, 1], tau outside [0, n - l] or duplicate ids.
  void validate() const;
  void save(const std::filesystem::path& path) const;
  static PoisonManifest load(const std::filesystem::path& path);
};

struct PoisonResult {
  LabeledDataset dataset;
  PoisonManifest manifest;
};

// Clean-label poisoning: floor(rate * |D_t|) target samples, chosen by seed,
// get the trigger at their own position scaled to `snr_db` below the host,
// plus bank noise when `noise` is non-null. Labels never change.
PoisonResult poison_dataset(const LabeledDataset& victim, int target, double rate,
                            const Trigger& trigger, double snr_db,
                            const NoiseBank* noise, std::uint64_t seed,
                            const PoisonOptions& opts = {});

}  // namespace bdlab

#endif  // BDLAB_ATTACK_POISON_H_
