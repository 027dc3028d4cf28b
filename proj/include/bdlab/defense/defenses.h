#ifndef BDLAB_DEFENSE_DEFENSES_H_
#define BDLAB_DEFENSE_DEFENSES_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bdlab/data/dataset.h"
#include "bdlab/dsp/waveform.h"
#include "bdlab/features/mfcc.h"
#include "bdlab/model/training.h"

namespace bdlab {

// ---- sample-dropping filter ----------------------------------------------

// Keeps round((1 - f) * n) samples: evenly spaced indices floor(j * n / k),
// or, when `random`, a seeded uniform choice kept in order.
Waveform filter_defense(const Waveform& x, double f, bool random = false,
                        std::uint64_t seed = 0);
std::vector<std::size_t> filter_kept_indices(std::size_t n, double f, bool random,
                                             std::uint64_t seed);
// Filters every sample; shortened waveforms are zero-padded back to the
// nominal length so the model input shape is unchanged.
LabeledDataset filter_dataset(const LabeledDataset& d, double f, bool random = false,
                              std::uint64_t seed = 0);

// ---- fine-pruning -------------------------------------------------------

struct PrunePoint {
  double ratio = 0.0;
  double ba = 0.0;
  double asr = 0.0;
};

struct PruneReport {
  std::string layer;
  std::vector<int> ranking;          // ascending mean |activation|
  std::vector<double> mean_activation;  // per channel, indexed by channel
  std::vector<PrunePoint> curve;
};

// Mean absolute last-conv activation of each channel over `benign`.
std::vector<double> channel_activity(const NetworkModel& model,
                                     const FeatureSet& benign);
// Channels ordered by ascending activity; ties keep channel order.
std::vector<int> prune_ranking(std::span<const double> activity);

struct FinePruneResult {
  NetworkModel model;
  PruneReport report;
  int pruned = 0;
};

// Masks the floor(ratio * C) least active last-conv channels.
FinePruneResult fine_prune(const NetworkModel& model, const LabeledDataset& benign,
                           double ratio, const MfccConfig& features = {});
NetworkModel prune_with_ranking(const NetworkModel& model, std::span<const int> ranking,
                                double ratio);

// Evaluates `metrics(model)` -> {BA, ASR} at every ratio.
using PruneMetrics = std::function<std::pair<double, double>(const NetworkModel&)>;
PruneReport prune_curve(const NetworkModel& model, const LabeledDataset& benign,
                        std::span<const double> ratios, const PruneMetrics& metrics,
                        const MfccConfig& features = {});

// ---- STRIP ----------------------------------------------------------------

struct StripVerdict {
  double entropy = 0.0;  // bits
  double threshold = -std::numeric_limits<double>::infinity();
  bool flagged = false;
};

inline constexpr int kDefaultStripOverlays = 32;

// Shannon entropy in bits, clamped into [0, log2 K].
double entropy_bits(std::span<const double> p);

// Averages predictions over x blended with each overlay (overlay scaled to
// the power of x, sum clamped) and flags entropy below `threshold`.
StripVerdict strip_entropy(const NetworkModel& model, const Waveform& x,
                           std::span<const Waveform> overlays,
                           double threshold = -std::numeric_limits<double>::infinity(),
                           const MfccConfig& features = {});

// STRIP entropy of every sample of `d`, each against `count` overlays drawn
// from `pool` by (seed, sample position).
std::vector<double> strip_entropies(const NetworkModel& model, const LabeledDataset& d,
                                    const LabeledDataset& pool, int count,
                                    std::uint64_t seed, const MfccConfig& features = {});

// Largest threshold whose false-positive rate on `benign_entropies` stays
// at or below `fpr` (flagging is H < threshold).
double strip_threshold(std::vector<double> benign_entropies, double fpr);

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;
};
Histogram histogram(std::span<const double> v, double lo, double hi, int bins);

// ---- Gram-matrix anomaly index --------------------------------------------

struct AnomalyReport {
  std::vector<std::string> vocabulary;
  std::vector<double> deviation;      // d_c
  std::vector<double> anomaly_index;  // R*_c
  std::vector<std::size_t> suspects;  // suspects predicted as each class
  double threshold = 0.0;             // e^2
  std::vector<bool> flagged;
};

inline constexpr double kMadScale = 1.4826;
inline constexpr double kMadFloor = 1e-9;

// R*_c = |d_c - median(d)| / (1.4826 * max(MAD(d), 1e-9)).
std::vector<double> anomaly_index(std::span<const double> d);

// Upper-triangle Gram features of orders 1 and 2 for one (C x S) feature map.
std::vector<double> gram_features(std::span<const float> map, int channels, int spatial);

// Gram statistics of last-conv feature maps; per-class benign min/max bounds;
// suspects scored against the bounds of their predicted class.
AnomalyReport beatrix_index(const NetworkModel& model, const LabeledDataset& benign,
                            const LabeledDataset& suspects,
                            const MfccConfig& features = {});

// ---- reports ---------------------------------------------------------------

// Each report carries `config_digest` so it can be traced to its experiment.
void save_prune_report(const PruneReport& r, const std::filesystem::path& path,
                       const std::string& config_digest = {});
void save_strip_report(const std::vector<double>& benign, const std::vector<double>& poisoned,
                       double threshold, double detection_rate,
                       const std::filesystem::path& path, int bins = 20,
                       const std::string& config_digest = {});
void save_anomaly_report(const AnomalyReport& r, const std::filesystem::path& path,
                         const std::string& config_digest = {});

}  // namespace bdlab

#endif  // BDLAB_DEFENSE_DEFENSES_H_
