#ifndef BDLAB_UTIL_RANDOM_H_
#define BDLAB_UTIL_RANDOM_H_

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace bdlab {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent streams from one seed.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed,
                                 std::initializer_list<std::uint64_t> salt) {
  std::uint64_t s = mix_seed(seed);
  for (std::uint64_t v : salt) s = mix_seed(s ^ mix_seed(v + 0x632be59bd9b4e019ULL));
  return s;
}

inline Rng make_rng(std::uint64_t seed,
                    std::initializer_list<std::uint64_t> salt = {}) {
  return Rng(derive_seed(seed, salt));
}

// Uniform integer on [lo, hi]. Written out instead of using
// std::uniform_int_distribution so draws do not depend on the standard
// library vendor.
inline std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(rng());
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return lo + static_cast<std::int64_t>(r % span);
}

// Uniform real on [lo, hi).
inline double uniform_real(Rng& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

inline double normal(Rng& rng) {
  // Box-Muller; vendor independent.
  double u1;
  do {
    u1 = uniform_real(rng, 0.0, 1.0);
  } while (u1 <= 0.0);
  const double u2 = uniform_real(rng, 0.0, 1.0);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

template <typename It>
void shuffle(It first, It last, Rng& rng) {
  const auto n = last - first;
  for (auto i = n - 1; i > 0; --i) {
    const auto j = uniform_int(rng, 0, i);
    std::swap(first[i], first[j]);
  }
}

}  // namespace bdlab

#endif  // BDLAB_UTIL_RANDOM_H_
