#include "gccvit/random.hpp"

#include <cmath>

namespace gccvit {

float truncated_normal(Rng& rng, float stddev) {
  std::normal_distribution<double> dist(0.0, 1.0);
  for (;;) {
    const double v = dist(rng);
    if (std::fabs(v) <= 2.0) return static_cast<float>(v * stddev);
  }
}

Tensor truncated_normal_tensor(Shape shape, float stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = truncated_normal(rng, stddev);
  return t;
}

Tensor uniform_tensor(Shape shape, float lo, float hi, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(uniform(rng, lo, hi));
  return t;
}

}  // namespace gccvit
