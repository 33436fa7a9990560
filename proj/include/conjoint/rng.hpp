#pragma once

// Counter-based deterministic randomness.  Each draw is keyed by
// (seed, vignette id, run index), so results do not depend on execution
// order or concurrency.

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace conjoint {

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Standard normal draw via Box-Muller on two hash-derived uniforms.
inline double counter_normal(std::uint64_t seed, std::string_view vignette_id, long run_index) {
  std::string key = std::to_string(seed);
  key += '|';
  key += vignette_id;
  key += '|';
  key += std::to_string(run_index);
  std::uint64_t state = fnv1a64(key);
  const std::uint64_t a = splitmix64(state);
  const std::uint64_t b = splitmix64(state);
  // u1 in (0, 1] so the log is finite; u2 in [0, 1).
  const double u1 = static_cast<double>((a >> 11) + 1) * 0x1.0p-53;
  const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
  constexpr double two_pi = 6.283185307179586476925286766559;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

}  // namespace conjoint
