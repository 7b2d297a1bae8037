#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "uhn/common.hpp"

namespace uhn {

// One master seed per run, split into independent named streams so that
// concurrent consumers (task sampling, architecture sampling, data shuffling,
// dropout, Fourier matrices) cannot perturb each other. A stream seed is
// splitmix64(master ^ fnv1a(name)), which is stable across runs and platforms.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t master, const std::string& name) {
  return splitmix64(master ^ fnv1a(name));
}

inline std::mt19937_64 make_stream(std::uint64_t master, const std::string& name) {
  return std::mt19937_64(stream_seed(master, name));
}

}  // namespace uhn
