#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

#include "bdl/tensor.hpp"

namespace bdl {

namespace detail {

// Philox4x32-10 (Salmon et al., "Parallel random numbers: as easy as 1, 2, 3").
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
    const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kW0;
    key[1] += kW1;
  }
  return ctr;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline double u53(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (std::uint64_t{hi} << 21) ^ (std::uint64_t{lo} >> 11);
  return static_cast<double>(bits & ((1ULL << 53) - 1)) * 0x1.0p-53;
}

}  // namespace detail

/// Counter-based random stream: every draw is a pure function of
/// (seed, stream_id, counter), so trajectories can be replayed or split
/// without sharing state.
class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t counter = 0)
      : seed_(seed), stream_id_(stream_id), counter_(counter) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }
  std::uint64_t counter() const noexcept { return counter_; }

  /// Independent child stream; does not advance this one.
  RngStream substream(std::uint64_t k) const {
    return RngStream(seed_, detail::splitmix64(stream_id_ ^ detail::splitmix64(k + 0x5bd1e995ULL)), 0);
  }

  std::array<std::uint32_t, 4> next_block() {
    const std::array<std::uint32_t, 4> ctr{static_cast<std::uint32_t>(counter_),
                                           static_cast<std::uint32_t>(counter_ >> 32),
                                           static_cast<std::uint32_t>(stream_id_),
                                           static_cast<std::uint32_t>(stream_id_ >> 32)};
    const std::array<std::uint32_t, 2> key{static_cast<std::uint32_t>(seed_),
                                           static_cast<std::uint32_t>(seed_ >> 32)};
    ++counter_;
    return detail::philox4x32(ctr, key);
  }

  /// Uniform in [0, 1).
  double uniform() {
    const auto b = next_block();
    return detail::u53(b[0], b[1]);
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t next_u64() {
    const auto b = next_block();
    return (std::uint64_t{b[0]} << 32) | b[1];
  }

  /// Two independent standard normals from one counter block (Box-Muller).
  std::array<double, 2> normal_pair() {
    const auto b = next_block();
    const double u1 = 1.0 - detail::u53(b[0], b[1]);  // (0, 1]
    const double u2 = detail::u53(b[2], b[3]);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    return {r * std::cos(a), r * std::sin(a)};
  }

  double normal() { return normal_pair()[0]; }

  friend bool operator==(const RngStream&, const RngStream&) = default;

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_id_ = 0;
  std::uint64_t counter_ = 0;
};

/// i.i.d. N(0, 1) tensor; consumes ceil(n/2) counter blocks of `rng`.
template <class T = float>
BasicTensor<T> gaussian_noise(RngStream& rng, const Dims& dims) {
  BasicTensor<T> out(dims);
  auto v = out.values();
  std::size_t i = 0;
  for (; i + 1 < v.size(); i += 2) {
    const auto p = rng.normal_pair();
    v[i] = static_cast<T>(p[0]);
    v[i + 1] = static_cast<T>(p[1]);
  }
  if (i < v.size()) v[i] = static_cast<T>(rng.normal_pair()[0]);
  return out;
}

}  // namespace bdl
