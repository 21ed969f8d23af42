#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <string>

namespace lldiff {

using Rng = std::mt19937_64;

/// Independent stream for (seed, stream id), e.g. one per scene.
inline Rng derive_stream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x6c6c6469u};
  return Rng(seq);
}

// Distributions are constructed per call so the engine state alone determines
// every draw (a checkpointed engine resumes bitwise).
template <class T>
void fill_normal(std::span<T> out, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& v : out) v = static_cast<T>(dist(rng));
}

inline double draw_uniform(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  return dist(rng);
}

inline int draw_int(Rng& rng, int lo, int hi) {
  std::uniform_int_distribution<int> dist(lo, hi);
  return dist(rng);
}

inline std::string serialize_rng(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline Rng deserialize_rng(const std::string& text) {
  Rng rng;
  std::istringstream is(text);
  is >> rng;
  return rng;
}

}  // namespace lldiff
