#include "bdlab/dsp/waveform.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace bdlab {

Waveform::Waveform(std::vector<double> samples, int sample_rate)
    : samples_(std::move(samples)), sample_rate_(sample_rate) {
  if (sample_rate_ <= 0) {
    throw std::invalid_argument("Waveform: sample_rate must be positive");
  }
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const double v = samples_[i];
    if (!std::isfinite(v) || v < -1.0 || v > 1.0) {
      throw std::invalid_argument("Waveform: sample " + std::to_string(i) +
                                  " = " + std::to_string(v) +
                                  " outside [-1, 1]");
    }
  }
}

Waveform Waveform::clamped(std::vector<double> samples, int sample_rate) {
  for (double& v : samples) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument("Waveform: non-finite sample");
    }
    v = std::clamp(v, -1.0, 1.0);
  }
  return Waveform(std::move(samples), sample_rate);
}

Waveform Waveform::zeros(std::size_t n, int sample_rate) {
  return Waveform(std::vector<double>(n, 0.0), sample_rate);
}

double Waveform::energy() const { return bdlab::energy(samples_); }

double Waveform::peak() const {
  double p = 0.0;
  for (double v : samples_) p = std::max(p, std::abs(v));
  return p;
}

Waveform Waveform::resized(std::size_t n) const {
  std::vector<double> out(samples_.begin(),
                          samples_.begin() + std::min(n, samples_.size()));
  out.resize(n, 0.0);
  Waveform w;
  w.samples_ = std::move(out);
  w.sample_rate_ = sample_rate_;
  return w;
}

NoiseBank::NoiseBank(std::vector<Waveform> noises) : noises_(std::move(noises)) {
  if (noises_.empty()) throw std::invalid_argument("NoiseBank: empty");
  for (const Waveform& w : noises_) {
    if (w.sample_rate() != noises_.front().sample_rate()) {
      throw std::invalid_argument("NoiseBank: mixed sample rates");
    }
    if (w.empty()) throw std::invalid_argument("NoiseBank: empty member");
  }
}

int NoiseBank::sample_rate() const {
  return noises_.empty() ? kDefaultSampleRate : noises_.front().sample_rate();
}

double energy(std::span<const double> x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

}  // namespace bdlab
