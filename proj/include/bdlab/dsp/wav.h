#ifndef BDLAB_DSP_WAV_H_
#define BDLAB_DSP_WAV_H_

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "bdlab/dsp/waveform.h"

namespace bdlab {

class WavError : public std::runtime_error {
 public:
  enum class Kind {
    kMissingFile,
    kMalformed,
    kChannelCount,
    kSampleRate,
    kBitDepth,
    kUnwritable,
  };
  WavError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Reads RIFF/WAVE 16-bit PCM mono. PCM code q decodes to q / 32768.
// expected_rate <= 0 accepts any rate.
Waveform load_wav(const std::filesystem::path& path,
                  int expected_rate = kDefaultSampleRate);

// Writes 16-bit PCM mono; amplitude a encodes as round(a * 32767), clamped.
void save_wav(const Waveform& w, const std::filesystem::path& path);

std::int16_t encode_pcm16(double amplitude);
inline double decode_pcm16(std::int16_t code) { return code / 32768.0; }

}  // namespace bdlab

#endif  // BDLAB_DSP_WAV_H_
