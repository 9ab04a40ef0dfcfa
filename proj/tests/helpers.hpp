#pragma once

#include <random>

#include "uno/grid_function.hpp"

namespace uno::test {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.vec()) v = u(rng);
  return t;
}

inline ComplexTensor random_complex(Shape shape, std::mt19937_64& rng, double sigma = 1.0) {
  std::normal_distribution<double> n(0.0, sigma);
  ComplexTensor t(std::move(shape));
  for (auto& v : t.vec()) v = {n(rng), n(rng)};
  return t;
}

/// sum(y * c) for a fixed random c; a generic scalar probe of y.
inline Var weighted_sum(Var y, std::uint64_t seed) {
  std::mt19937_64 r(seed);
  return ad::sum(ad::mul(y, y.tape->constant(random_tensor(y.shape(), r))));
}

inline double rel_l2(std::span<const double> a, std::span<const double> b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / den);
}

}  // namespace uno::test
