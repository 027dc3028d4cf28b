#ifndef BDLAB_UTIL_DIGEST_H_
#define BDLAB_UTIL_DIGEST_H_

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace bdlab {

// 64-bit FNV-1a. Stable across platforms and runs, unlike std::hash.
class Digest {
 public:
  Digest& update(std::string_view bytes);
  Digest& update(std::span<const double> values);
  Digest& update(std::span<const float> values);
  Digest& update(std::int64_t value);
  Digest& update(double value);

  std::uint64_t value() const { return state_; }
  std::string hex() const;

 private:
  void mix(const unsigned char* p, std::size_t n);
  std::uint64_t state_ = 1469598103934665603ULL;
};

std::string digest_of(std::string_view text);

}  // namespace bdlab

#endif  // BDLAB_UTIL_DIGEST_H_
