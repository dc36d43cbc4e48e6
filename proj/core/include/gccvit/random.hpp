#pragma once

#include <cstdint>
#include <random>

#include "gccvit/tensor.hpp"

namespace gccvit {

using Rng = std::mt19937_64;

/// Uniform in [lo, hi).
inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline bool coin(Rng& rng) { return std::bernoulli_distribution(0.5)(rng); }

/// Normal(0, stddev) resampled until it falls within two standard deviations.
float truncated_normal(Rng& rng, float stddev);

Tensor truncated_normal_tensor(Shape shape, float stddev, Rng& rng);
Tensor uniform_tensor(Shape shape, float lo, float hi, Rng& rng);

}  // namespace gccvit
