#ifndef BDLAB_DATA_DATASET_H_
#define BDLAB_DATA_DATASET_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bdlab/dsp/waveform.h"

namespace bdlab {

struct Sample {
  std::string id;  // stable identifier, "<class>/<stem>"
  Waveform wave;
  int label = 0;
};

// Labelled waveforms sharing one duration and sample rate.
class LabeledDataset {
 public:
  LabeledDataset() = default;
  LabeledDataset(std::vector<std::string> vocabulary, std::size_t nominal_length,
                 int sample_rate = kDefaultSampleRate);

  // Pads/trims to the nominal length. Throws on label outside vocabulary or
  // rate mismatch.
  void add(std::string id, const Waveform& wave, int label);

  const std::vector<Sample>& samples() const { return samples_; }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const std::vector<std::string>& vocabulary() const { return vocabulary_; }
  int num_classes() const { return static_cast<int>(vocabulary_.size()); }
  std::size_t nominal_length() const { return nominal_length_; }
  int sample_rate() const { return sample_rate_; }

  // -1 when absent.
  int label_index(const std::string& name) const;
  std::vector<std::size_t> indices_of(int label) const;
  std::size_t count(int label) const { return indices_of(label).size(); }

  // Subset by positions, same vocabulary.
  LabeledDataset subset(const std::vector<std::size_t>& positions) const;
  // Keeps only `classes` (in the given order) and re-indexes labels.
  LabeledDataset select_classes(const std::vector<std::string>& classes) const;
  // Replaces the waveform at `pos`, keeping id and label.
  void replace_wave(std::size_t pos, const Waveform& wave);

  std::string digest() const;

 private:
  std::vector<std::string> vocabulary_;
  std::size_t nominal_length_ = 0;
  int sample_rate_ = kDefaultSampleRate;
  std::vector<Sample> samples_;
};

// ---- synthetic keyword corpus -------------------------------------------

struct SynthConfig {
  int num_classes = 8;
  int samples_per_class = 120;
  double duration_s = 1.0;
  int sample_rate = kDefaultSampleRate;
  double pitch_jitter = 0.15;      // +/- fraction of the fundamental
  double amplitude_jitter = 0.25;  // +/- fraction of the peak level
  double onset_jitter_s = 0.25;    // +/- seconds around the nominal onset
  double background_level = 2e-4;  // std-dev of white background noise
  std::uint64_t seed = 7;

  void validate() const;
  std::string describe() const;
};

// Class k is a tonal "word": its own fundamental plus two harmonics under a
// class-specific envelope, jittered per sample. Labels are "w0".."w{K-1}".
LabeledDataset synth_corpus(const SynthConfig& cfg);
std::string synth_class_name(int k);

// ---- on-disk layout: root/<class>/*.wav ---------------------------------

// nominal_length 0 means the longest file's length.
LabeledDataset load_dataset(const std::filesystem::path& root,
                            int sample_rate = kDefaultSampleRate,
                            std::size_t nominal_length = 0);
void save_dataset(const LabeledDataset& d, const std::filesystem::path& root);

// ---- splits --------------------------------------------------------------

enum class Split { kTrain, kVal, kTest };
const char* split_name(Split s);
Split parse_split(const std::string& s);

struct SplitAssignment {
  std::map<std::string, Split> by_id;

  LabeledDataset take(const LabeledDataset& d, Split which) const;
  void save(const std::filesystem::path& path, const std::string& config_digest = {}) const;
  static SplitAssignment load(const std::filesystem::path& path);
};

// Seeded stratified split, per class: round(train * n) train,
// round(val * n) validation, the rest test.
SplitAssignment stratified_split(const LabeledDataset& d, std::uint64_t seed,
                                 double train = 0.64, double val = 0.16);

// ---- noise bank ----------------------------------------------------------

struct NoiseBankOptions {
  bool synthesize_if_missing = true;
  int synth_count = 100;
  double synth_duration_s = 1.0;
  int sample_rate = kDefaultSampleRate;
  std::uint64_t seed = 11;
};

// Band-limited noise bursts with random envelopes.
NoiseBank synth_noise_bank(const NoiseBankOptions& opts);
// All WAV files in `dir` (sorted by name). Falls back to synthesis when the
// directory is absent or holds no WAV files and synthesis is enabled.
NoiseBank load_noise_bank(const std::optional<std::filesystem::path>& dir,
                          const NoiseBankOptions& opts = {});

}  // namespace bdlab

#endif  // BDLAB_DATA_DATASET_H_
