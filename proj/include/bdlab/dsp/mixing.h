#ifndef BDLAB_DSP_MIXING_H_
#define BDLAB_DSP_MIXING_H_

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "bdlab/dsp/waveform.h"

namespace bdlab {

// Sentinel meaning "no noise": mix_noise and the channel pass input through.
inline constexpr double kNoNoise = std::numeric_limits<double>::infinity();

// result[i] = clamp(x[i] + s * delta[i - tau], -1, 1) on [tau, tau + l),
// x[i] elsewhere.
Waveform add_trigger(const Waveform& x, const Waveform& delta, std::size_t tau,
                     double scale = 1.0);

// 10 * log10(|signal|^2 / |noise|^2).
double snr_db(std::span<const double> signal, std::span<const double> noise);
double snr_db(const Waveform& signal, const Waveform& noise);

// Scale s such that snr_db(x, s * delta) == target_snr_db.
double scale_for_snr(std::span<const double> x, std::span<const double> delta,
                     double target_snr_db);
double scale_for_snr(const Waveform& x, const Waveform& delta,
                     double target_snr_db);

// The n-sample noise excerpt mix_noise uses: cyclic tiling when the noise is
// shorter than n, otherwise a crop starting at a seeded random offset.
std::vector<double> noise_segment(const Waveform& noise, std::size_t n,
                                  std::uint64_t seed);

// x + s * segment, clamped, where s puts the segment at `snr` dB below x.
// snr == kNoNoise returns x unchanged.
Waveform mix_noise(const Waveform& x, const Waveform& noise, double snr,
                   std::uint64_t seed);

struct ChannelConfig {
  double distance_m = 1.0;
  double reference_distance_m = 1.0;
  double noise_snr_db = kNoNoise;
  std::uint64_t seed = 0;

  void validate() const;
};

// Inverse-distance attenuation (unit gain up to the reference distance),
// then ambient noise from a seed-chosen bank member, then clamp.
Waveform simulate_channel(const Waveform& x, const NoiseBank& bank,
                          const ChannelConfig& cfg);

double channel_gain(const ChannelConfig& cfg);

}  // namespace bdlab

#endif  // BDLAB_DSP_MIXING_H_
