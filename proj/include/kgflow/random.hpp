#pragma once

#include <cstdint>
#include <random>

#include "kgflow/linalg.hpp"

namespace kgflow {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds from a base
// seed and a stream index (e.g. the step number).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream = 0) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// n x d matrix of independent standard-normal draws, filled row by row.
inline Matrix standard_normal(Rng& rng, Eigen::Index n, Eigen::Index d) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) out(i, j) = normal(rng);
  return out;
}

inline Matrix standard_normal(std::uint64_t seed, Eigen::Index n, Eigen::Index d) {
  Rng rng(seed);
  return standard_normal(rng, n, d);
}

}  // namespace kgflow
