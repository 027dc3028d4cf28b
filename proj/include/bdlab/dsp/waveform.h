#ifndef BDLAB_DSP_WAVEFORM_H_
#define BDLAB_DSP_WAVEFORM_H_

#include <cstddef>
#include <span>
#include <vector>

namespace bdlab {

inline constexpr int kDefaultSampleRate = 16000;

// Mono audio with every sample in [-1, 1]. Immutable once built.
class Waveform {
 public:
  Waveform() = default;
  // Throws std::invalid_argument if a sample is outside [-1, 1], non-finite,
  // or sample_rate <= 0.
  explicit Waveform(std::vector<double> samples, int sample_rate = kDefaultSampleRate);

  // Clamps into [-1, 1] instead of rejecting. Non-finite values still throw.
  static Waveform clamped(std::vector<double> samples,
                          int sample_rate = kDefaultSampleRate);
  static Waveform zeros(std::size_t n, int sample_rate = kDefaultSampleRate);

  std::span<const double> samples() const { return samples_; }
  const std::vector<double>& vector() const { return samples_; }
  double operator[](std::size_t i) const { return samples_[i]; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  int sample_rate() const { return sample_rate_; }
  double duration_s() const {
    return static_cast<double>(samples_.size()) / sample_rate_;
  }

  // Squared L2 norm.
  double energy() const;
  double peak() const;

  // Zero-pads or truncates at the tail.
  Waveform resized(std::size_t n) const;

  bool operator==(const Waveform&) const = default;

 private:
  std::vector<double> samples_;
  int sample_rate_ = kDefaultSampleRate;
};

// Collection of noise recordings sharing one sample rate.
class NoiseBank {
 public:
  NoiseBank() = default;
  // Throws if empty or rates disagree.
  explicit NoiseBank(std::vector<Waveform> noises);

  std::size_t size() const { return noises_.size(); }
  bool empty() const { return noises_.empty(); }
  const Waveform& operator[](std::size_t i) const { return noises_[i]; }
  const std::vector<Waveform>& noises() const { return noises_; }
  int sample_rate() const;

 private:
  std::vector<Waveform> noises_;
};

double energy(std::span<const double> x);

}  // namespace bdlab

#endif  // BDLAB_DSP_WAVEFORM_H_
