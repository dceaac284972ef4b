#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace pdvn {

// FNV-1a 64-bit. Used for fingerprint n-gram hashing, file checksums and
// config hashes; the constants are part of the on-disk format contracts.
inline constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ull;
inline constexpr uint64_t kFnvPrime = 0x100000001b3ull;

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = kFnvOffset) {
  return fnv1a64(s.data(), s.size(), h);
}

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed and stream indices.
inline uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
  uint64_t h = splitmix64(base ^ 0x6d656f77736565ull);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  h = splitmix64(h ^ c);
  return h;
}

// mt19937_64 is bit-portable per the standard; std::uniform_int_distribution
// is not, so bounded draws go through these helpers instead.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next() { return engine_(); }

  // Uniform in [0, n), n > 0. Rejection-free multiply-shift (Lemire); bias is
  // negligible for the n used here and the result is platform-stable.
  uint64_t below(uint64_t n) {
    return static_cast<uint64_t>((static_cast<unsigned __int128>(next()) * n) >> 64);
  }

  int below_int(int n) { return static_cast<int>(below(static_cast<uint64_t>(n))); }

  // Uniform in [0, 1).
  double real01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  bool chance(double p) { return real01() < p; }

  // Uniform in [-s, s).
  double symmetric(double s) { return (2.0 * real01() - 1.0) * s; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // Index draw proportional to non-negative weights; sum must be positive.
  size_t weighted(const std::vector<double>& w) {
    double total = 0;
    for (double x : w) total += x;
    double r = real01() * total;
    double acc = 0;
    for (size_t i = 0; i + 1 < w.size(); ++i) {
      acc += w[i];
      if (r < acc) return i;
    }
    return w.empty() ? 0 : w.size() - 1;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace pdvn
