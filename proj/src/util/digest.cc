#include "bdlab/util/digest.h"

#include <cstdio>

namespace bdlab {

void Digest::mix(const unsigned char* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    state_ ^= p[i];
    state_ *= 1099511628211ULL;
  }
}

Digest& Digest::update(std::string_view bytes) {
  mix(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size());
  // Length terminator so ("ab","c") and ("a","bc") differ.
  const std::uint64_t n = bytes.size();
  mix(reinterpret_cast<const unsigned char*>(&n), sizeof n);
  return *this;
}

Digest& Digest::update(std::span<const double> values) {
  mix(reinterpret_cast<const unsigned char*>(values.data()),
      values.size_bytes());
  return *this;
}

Digest& Digest::update(std::span<const float> values) {
  mix(reinterpret_cast<const unsigned char*>(values.data()),
      values.size_bytes());
  return *this;
}

Digest& Digest::update(std::int64_t value) {
  mix(reinterpret_cast<const unsigned char*>(&value), sizeof value);
  return *this;
}

Digest& Digest::update(double value) {
  mix(reinterpret_cast<const unsigned char*>(&value), sizeof value);
  return *this;
}

std::string Digest::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(state_));
  return buf;
}

std::string digest_of(std::string_view text) {
  return Digest().update(text).hex();
}

}  // namespace bdlab
