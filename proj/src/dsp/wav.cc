#include "bdlab/dsp/wav.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

namespace bdlab {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(v & 0xFF);
  out.push_back(v >> 8);
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xFF);
}

void put_tag(std::vector<unsigned char>& out, const char* tag) {
  out.insert(out.end(), tag, tag + 4);
}

}  // namespace

std::int16_t encode_pcm16(double amplitude) {
  const double q = std::round(amplitude * 32767.0);
  return static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0));
}

Waveform load_wav(const std::filesystem::path& path, int expected_rate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw WavError(WavError::Kind::kMissingFile,
                   "cannot open WAV file: " + path.string());
  }
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  const auto malformed = [&](const std::string& why) {
    return WavError(WavError::Kind::kMalformed,
                    path.string() + ": malformed WAV (" + why + ")");
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw malformed("missing RIFF/WAVE header");
  }

  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = bytes.size() - body;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || size > avail) throw malformed("short fmt chunk");
      const unsigned char* f = bytes.data() + body;
      std::uint16_t format = read_u16(f);
      channels = read_u16(f + 2);
      rate = read_u32(f + 4);
      bits = read_u16(f + 14);
      if (format == kFormatExtensible && size >= 40) {
        format = read_u16(f + 24);
      }
      if (format != kFormatPcm) {
        throw WavError(WavError::Kind::kBitDepth,
                       path.string() + ": not integer PCM (format tag " +
                           std::to_string(format) + ")");
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      // Some writers leave the size at 0 or 0xFFFFFFFF when streaming.
      data_size = std::min<std::size_t>(size, avail);
    }
    pos = body + size + (size & 1);
  }
  if (!have_fmt) throw malformed("no fmt chunk");
  if (data == nullptr) throw malformed("no data chunk");
  if (channels != 1) {
    throw WavError(WavError::Kind::kChannelCount,
                   path.string() + ": expected mono, found " +
                       std::to_string(channels) + " channels");
  }
  if (bits != 16) {
    throw WavError(WavError::Kind::kBitDepth,
                   path.string() + ": expected 16-bit PCM, found " +
                       std::to_string(bits) + "-bit");
  }
  if (expected_rate > 0 && rate != static_cast<std::uint32_t>(expected_rate)) {
    throw WavError(WavError::Kind::kSampleRate,
                   path.string() + ": sample rate " + std::to_string(rate) +
                       " Hz, expected " + std::to_string(expected_rate));
  }
  if (rate == 0) throw malformed("zero sample rate");

  std::vector<double> samples(data_size / 2);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    samples[i] = decode_pcm16(static_cast<std::int16_t>(read_u16(data + 2 * i)));
  }
  return Waveform(std::move(samples), static_cast<int>(rate));
}

void save_wav(const Waveform& w, const std::filesystem::path& path) {
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.size() * 2);
  std::vector<unsigned char> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate()));
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate()) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  put_tag(out, "data");
  put_u32(out, data_bytes);
  for (double a : w.samples()) {
    put_u16(out, static_cast<std::uint16_t>(encode_pcm16(a)));
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) {
    throw WavError(WavError::Kind::kUnwritable,
                   "cannot write WAV file: " + path.string());
  }
  file.write(reinterpret_cast<const char*>(out.data()),
             static_cast<std::streamsize>(out.size()));
  if (!file) {
    throw WavError(WavError::Kind::kUnwritable,
                   "write failed: " + path.string());
  }
}

}  // namespace bdlab
