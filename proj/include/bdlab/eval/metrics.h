#ifndef BDLAB_EVAL_METRICS_H_
#define BDLAB_EVAL_METRICS_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bdlab/attack/poison.h"
#include "bdlab/attack/trigger.h"
#include "bdlab/data/dataset.h"
#include "bdlab/dsp/mixing.h"
#include "bdlab/features/mfcc.h"
#include "bdlab/model/training.h"

namespace bdlab {

double benign_accuracy(const NetworkModel& model, const LabeledDataset& test,
                       const MfccConfig& features = {});

struct AttackOptions {
  double snr_db = 30.0;
  bool scale_by_snr = true;  // false attaches delta unscaled
  PositionPolicy policy = PositionPolicy::kRandom;
  std::size_t fixed_tau = 0;
  std::uint64_t seed = 0;
  // Triggered samples additionally pass through this channel when set.
  std::optional<ChannelConfig> channel;
  const NoiseBank* bank = nullptr;
};

// Non-target samples of `test` with the trigger attached. Position and
// channel draws depend on (seed, sample id) only, so the result does not
// depend on sample order.
LabeledDataset triggered_set(const LabeledDataset& test, int target,
                             const Trigger& trigger, const AttackOptions& opts);

// Fraction of triggered non-target samples classified as `target`.
double attack_success_rate(const NetworkModel& model, const LabeledDataset& test,
                           int target, const Trigger& trigger,
                           const AttackOptions& opts,
                           const MfccConfig& features = {});

// Rows are actual classes, columns target classes; the diagonal is empty.
struct ClassWiseAsr {
  std::vector<std::string> vocabulary;
  std::vector<std::optional<double>> cells;  // K x K, row-major

  int size() const { return static_cast<int>(vocabulary.size()); }
  const std::optional<double>& at(int actual, int target) const {
    return cells[static_cast<std::size_t>(actual) * vocabulary.size() + target];
  }
  std::string to_csv() const;
};

// `models[t]` is the model infected for target t and `triggers[t]` its
// trigger; both must cover every class.
ClassWiseAsr class_wise_asr(const std::map<int, const NetworkModel*>& models,
                            const LabeledDataset& victim,
                            const std::map<int, Trigger>& triggers,
                            const AttackOptions& opts,
                            const MfccConfig& features = {});

struct TTestResult {
  double t = 0.0;
  int df = 0;
  double p = 1.0;
  double mean_diff = 0.0;
};

// Two-tailed paired t-test on a - b.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);
// CDF of Student's t with `df` degrees of freedom, by adaptive Simpson
// integration of the density.
double student_t_cdf(double t, double df);

struct EvalReport {
  double ba = 0.0;
  double asr = 0.0;
  std::size_t n_benign = 0;
  std::size_t n_attack = 0;
  std::string target_name;
  std::optional<ClassWiseAsr> class_wise;
  std::map<std::string, double> extra;
  std::string config_digest;

  void validate() const;
};

inline constexpr int kReportSchemaVersion = 1;

// JSON at `path`; when class_wise is set, also "<stem>.classwise.csv".
void write_report(const EvalReport& r, const std::filesystem::path& path);
EvalReport read_report(const std::filesystem::path& path);

}  // namespace bdlab

#endif  // BDLAB_EVAL_METRICS_H_
