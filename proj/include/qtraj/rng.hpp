#pragma once

// Counter-based random numbers for reproducible parallel Monte Carlo.
//
// Every Gaussian draw is a pure function of
//   (master_seed, trajectory_index, step, channel, tag)
// so results never depend on thread scheduling.
//
// Key schedule (bit-exact):
//   key64   = master_seed XOR splitmix64_mix(trajectory_index)
//   key     = { low 32 bits of key64, high 32 bits of key64 }
//   counter = { low 32 bits of step, high 32 bits of step, channel, tag }
//   block   = Philox4x32-10(counter, key)
// The four output words form two 64-bit integers u = w1:w0 and v = w3:w2,
// turned into uniforms U1 = ((u >> 11) + 1) * 2^-53 in (0, 1] and
// U2 = (v >> 11) * 2^-53 in [0, 1). Box-Muller then gives
//   z = sqrt(-2 ln U1) * cos(2 pi U2).

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace qtraj {

/// Finalizer of the SplitMix64 generator (Steele, Lea, Flood 2014).
constexpr std::uint64_t splitmix64_mix(std::uint64_t x) {
  std::uint64_t z = x + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

/// Philox4x32 with 10 rounds (Salmon et al., SC'11).
constexpr PhiloxCounter philox4x32_10(PhiloxCounter ctr, PhiloxKey key) {
  constexpr std::uint32_t m0 = 0xD2511F53u, m1 = 0xCD9E8D57u;
  constexpr std::uint32_t w0 = 0x9E3779B9u, w1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(m0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(m1) * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += w0;
    key[1] += w1;
  }
  return ctr;
}

/// Stream tags separate independent uses of the same (trajectory, step, channel).
enum class StreamTag : std::uint32_t {
  wiener = 0,
  auxiliary = 1,
};

/// Gaussian increments keyed by (master seed, trajectory index). Stateless:
/// the counter is supplied by the caller on every draw.
class WienerStream {
 public:
  WienerStream() = default;
  WienerStream(std::uint64_t master_seed, std::uint64_t trajectory_index)
      : master_seed_(master_seed), trajectory_index_(trajectory_index),
        key64_(master_seed ^ splitmix64_mix(trajectory_index)) {}

  [[nodiscard]] std::uint64_t master_seed() const { return master_seed_; }
  [[nodiscard]] std::uint64_t trajectory_index() const { return trajectory_index_; }
  [[nodiscard]] std::uint64_t key() const { return key64_; }

  [[nodiscard]] PhiloxCounter block(std::uint64_t step, std::uint32_t channel,
                                    StreamTag tag = StreamTag::wiener) const {
    return philox4x32_10({static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32), channel,
                          static_cast<std::uint32_t>(tag)},
                         {static_cast<std::uint32_t>(key64_), static_cast<std::uint32_t>(key64_ >> 32)});
  }

  /// Uniform pair (U1 in (0,1], U2 in [0,1)).
  [[nodiscard]] std::array<double, 2> uniforms(std::uint64_t step, std::uint32_t channel,
                                               StreamTag tag = StreamTag::wiener) const {
    const auto w = block(step, channel, tag);
    const std::uint64_t u = (static_cast<std::uint64_t>(w[1]) << 32) | w[0];
    const std::uint64_t v = (static_cast<std::uint64_t>(w[3]) << 32) | w[2];
    constexpr double scale = 0x1.0p-53;
    return {static_cast<double>((u >> 11) + 1) * scale, static_cast<double>(v >> 11) * scale};
  }

  [[nodiscard]] double uniform(std::uint64_t step, std::uint32_t channel,
                               StreamTag tag = StreamTag::auxiliary) const {
    return uniforms(step, channel, tag)[1];
  }

  /// Standard normal deviate.
  [[nodiscard]] double normal(std::uint64_t step, std::uint32_t channel,
                              StreamTag tag = StreamTag::wiener) const {
    const auto [u1, u2] = uniforms(step, channel, tag);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Wiener increment with variance dt.
  [[nodiscard]] double increment(std::uint64_t step, std::uint32_t channel, double dt) const {
    return std::sqrt(dt) * normal(step, channel, StreamTag::wiener);
  }

 private:
  std::uint64_t master_seed_ = 0;
  std::uint64_t trajectory_index_ = 0;
  std::uint64_t key64_ = splitmix64_mix(0);
};

}  // namespace qtraj
