#include "bdlab/dsp/mixing.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "bdlab/util/random.h"

namespace bdlab {

Waveform add_trigger(const Waveform& x, const Waveform& delta, std::size_t tau,
                     double scale) {
  if (delta.size() > x.size()) {
    throw std::invalid_argument("add_trigger: trigger (" +
                                std::to_string(delta.size()) +
                                " samples) longer than host (" +
                                std::to_string(x.size()) + ")");
  }
  if (tau > x.size() - delta.size()) {
    throw std::out_of_range("add_trigger: tau " + std::to_string(tau) +
                            " outside [0, " +
                            std::to_string(x.size() - delta.size()) + "]");
  }
  if (!(scale >= 0.0) || !std::isfinite(scale)) {
    throw std::invalid_argument("add_trigger: scale must be finite and >= 0");
  }
  std::vector<double> out = x.vector();
  const auto d = delta.samples();
  for (std::size_t j = 0; j < d.size(); ++j) {
    out[tau + j] = std::clamp(out[tau + j] + scale * d[j], -1.0, 1.0);
  }
  return Waveform(std::move(out), x.sample_rate());
}

double snr_db(std::span<const double> signal, std::span<const double> noise) {
  if (signal.empty() || noise.empty()) {
    throw std::invalid_argument("snr_db: empty input");
  }
  const double pn = energy(noise);
  if (!(pn > 0.0)) throw std::domain_error("snr_db: zero-power noise component");
  return 10.0 * std::log10(energy(signal) / pn);
}

double snr_db(const Waveform& signal, const Waveform& noise) {
  return snr_db(signal.samples(), noise.samples());
}

double scale_for_snr(std::span<const double> x, std::span<const double> delta,
                     double target_snr_db) {
  const double ex = energy(x);
  const double ed = energy(delta);
  if (!(ex > 0.0)) throw std::domain_error("scale_for_snr: zero-energy host");
  if (!(ed > 0.0)) throw std::domain_error("scale_for_snr: zero-energy trigger");
  return std::pow(10.0, -target_snr_db / 20.0) * std::sqrt(ex) / std::sqrt(ed);
}

double scale_for_snr(const Waveform& x, const Waveform& delta,
                     double target_snr_db) {
  return scale_for_snr(x.samples(), delta.samples(), target_snr_db);
}

std::vector<double> noise_segment(const Waveform& noise, std::size_t n,
                                  std::uint64_t seed) {
  if (noise.empty()) throw std::invalid_argument("noise_segment: empty noise");
  std::vector<double> seg(n);
  const auto w = noise.samples();
  if (w.size() < n) {
    for (std::size_t i = 0; i < n; ++i) seg[i] = w[i % w.size()];
  } else {
    Rng rng = make_rng(seed, {0x6e6f697365ULL});
    const auto offset = static_cast<std::size_t>(
        uniform_int(rng, 0, static_cast<std::int64_t>(w.size() - n)));
    std::copy_n(w.begin() + static_cast<std::ptrdiff_t>(offset), n, seg.begin());
  }
  return seg;
}

Waveform mix_noise(const Waveform& x, const Waveform& noise, double snr,
                   std::uint64_t seed) {
  if (snr == kNoNoise) return x;
  const std::vector<double> seg = noise_segment(noise, x.size(), seed);
  const double s = scale_for_snr(x.samples(), seg, snr);
  std::vector<double> out = x.vector();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::clamp(out[i] + s * seg[i], -1.0, 1.0);
  }
  return Waveform(std::move(out), x.sample_rate());
}

void ChannelConfig::validate() const {
  if (!(distance_m >= 0.0)) {
    throw std::invalid_argument("ChannelConfig: distance_m must be >= 0");
  }
  if (!(reference_distance_m > 0.0)) {
    throw std::invalid_argument(
        "ChannelConfig: reference_distance_m must be > 0");
  }
}

double channel_gain(const ChannelConfig& cfg) {
  return cfg.reference_distance_m /
         std::max(cfg.distance_m, cfg.reference_distance_m);
}

Waveform simulate_channel(const Waveform& x, const NoiseBank& bank,
                          const ChannelConfig& cfg) {
  cfg.validate();
  if (bank.empty()) throw std::invalid_argument("simulate_channel: empty bank");
  const double gain = channel_gain(cfg);
  std::vector<double> att = x.vector();
  for (double& v : att) v *= gain;
  Waveform attenuated(std::move(att), x.sample_rate());
  if (cfg.noise_snr_db == kNoNoise) return attenuated;
  Rng rng = make_rng(cfg.seed, {0x6368616eULL});
  const auto member = static_cast<std::size_t>(
      uniform_int(rng, 0, static_cast<std::int64_t>(bank.size()) - 1));
  return mix_noise(attenuated, bank[member], cfg.noise_snr_db,
                   derive_seed(cfg.seed, {member}));
}

}  // namespace bdlab
