#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace acof {

/// Deterministic random stream derived from (run seed, stream name).
///
/// Separate names give statistically independent streams, so extra draws
/// on one stream never shift another. Conversions to real numbers are
/// done here rather than through <random> distributions so sequences are
/// identical across standard library implementations.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::string_view name);

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal (Box-Muller, no cached second value).
  double normal();

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view text);

}  // namespace acof
