#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace swhf {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
/// Output is a pure function of (key, counter).
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kM0 = 0xD2511F53u;
  constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u;
  constexpr std::uint32_t kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
    const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
    ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
           static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
    key[0] += kW0;
    key[1] += kW1;
  }
  return ctr;
}

/// Stream tags keep independent uses of one seed apart.
enum class Stream : std::uint32_t {
  kBrownian = 1,
  kDispersion = 2,
  kSampling = 3,
  kBootstrap = 4,
  kDerivedSeed = 5,
};

/// Deterministic standard normal keyed by (seed, stream, level, index, component).
inline double keyed_normal(std::uint64_t seed, Stream stream, std::uint32_t level, std::uint64_t index,
                           std::uint32_t component = 0) {
  const std::array<std::uint32_t, 2> key{static_cast<std::uint32_t>(seed),
                                         static_cast<std::uint32_t>(seed >> 32)};
  const std::array<std::uint32_t, 4> ctr{static_cast<std::uint32_t>(index),
                                         static_cast<std::uint32_t>(index >> 32),
                                         level ^ (static_cast<std::uint32_t>(stream) << 24), component};
  const auto r = philox4x32(ctr, key);
  const std::uint64_t a = (std::uint64_t{r[0]} << 21) ^ (r[1] >> 11);
  const std::uint64_t b = (std::uint64_t{r[2]} << 21) ^ (r[3] >> 11);
  // u1 in (0,1], u2 in [0,1)
  const double u1 = (static_cast<double>(a & ((1ull << 53) - 1)) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(b & ((1ull << 53) - 1)) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Deterministic uniform in [0,1) keyed like keyed_normal.
inline double keyed_uniform(std::uint64_t seed, Stream stream, std::uint32_t level, std::uint64_t index,
                            std::uint32_t component = 0) {
  const std::array<std::uint32_t, 2> key{static_cast<std::uint32_t>(seed),
                                         static_cast<std::uint32_t>(seed >> 32)};
  const std::array<std::uint32_t, 4> ctr{static_cast<std::uint32_t>(index),
                                         static_cast<std::uint32_t>(index >> 32),
                                         level ^ (static_cast<std::uint32_t>(stream) << 24), component};
  const auto r = philox4x32(ctr, key);
  const std::uint64_t a = (std::uint64_t{r[0]} << 21) ^ (r[1] >> 11);
  return static_cast<double>(a & ((1ull << 53) - 1)) * 0x1.0p-53;
}

/// Child seed for replication `index` of a study keyed by `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  const std::array<std::uint32_t, 2> key{static_cast<std::uint32_t>(seed),
                                         static_cast<std::uint32_t>(seed >> 32)};
  const auto r = philox4x32({static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                             static_cast<std::uint32_t>(Stream::kDerivedSeed), 0},
                            key);
  return (std::uint64_t{r[0]} << 32) | r[1];
}

}  // namespace swhf
