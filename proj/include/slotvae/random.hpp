#pragma once
// Deterministic randomness: xoshiro256++ streams seeded through splitmix64.
// Streams fork by hashing (seed, label) or (seed, index) — never by sequential
// draws — so substreams are independent of draw order and safe to evaluate in
// parallel. Normals come from the Box-Muller cosine branch with no cached
// spare; u1 is drawn from (0, 1] so the log is always finite.

#include <array>
#include <cmath>
#include <cstdint>
#include <string_view>

#include "slotvae/tensor.hpp"

namespace slotvae {

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace detail {
// FNV-1a over bytes, with a one-byte domain tag so label-derived and
// index-derived children can never collide.
inline std::uint64_t fnv1a(const unsigned char* p, size_t n, unsigned char tag) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  h = (h ^ tag) * 0x100000001B3ull;
  for (size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 0x100000001B3ull;
  return h;
}
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t s = seed ^ (salt + 0x9E3779B97F4A7C15ull + (seed << 6) + (seed >> 2));
  return splitmix64_next(s);
}
}  // namespace detail

class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t s = seed;
    for (auto& w : state_) w = splitmix64_next(s);
  }

  std::uint64_t seed() const { return seed_; }

  // xoshiro256++
  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  // uniform in (0, 1] — safe under log()
  double uniform_pos() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }
  double uniform_in(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // unbiased integer in [0, n)
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }
  int below_int(int n) { return static_cast<int>(below(static_cast<std::uint64_t>(n))); }

  // standard normal, Box-Muller cosine branch (one draw per call, no spare)
  double normal() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  template <typename S>
  void fill_normal(Tensor<S>& t, double scale = 1.0) {
    for (auto& v : t.data) v = static_cast<S>(normal() * scale);
  }
  template <typename S>
  void fill_uniform(Tensor<S>& t, double lo, double hi) {
    for (auto& v : t.data) v = static_cast<S>(uniform_in(lo, hi));
  }

  // Child streams: a pure function of (this stream's seed, label/index).
  Rng child(std::string_view label) const {
    const auto* p = reinterpret_cast<const unsigned char*>(label.data());
    return Rng(detail::mix_seed(seed_, detail::fnv1a(p, label.size(), 0x4C)));
  }
  Rng child(std::uint64_t index) const {
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(index >> (8 * i));
    return Rng(detail::mix_seed(seed_, detail::fnv1a(bytes, 8, 0x49)));
  }

  // Fisher-Yates over an index vector.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_;
};

}  // namespace slotvae
