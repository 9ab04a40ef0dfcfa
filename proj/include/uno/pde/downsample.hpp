#pragma once

// Strided restriction of the trailing two grid axes.

#include "uno/tensor.hpp"

namespace uno::pde {

enum class GridKind {
  Nodes,     // n points including both boundaries; stride (n - 1) / (m - 1)
  Periodic,  // n points on [0, 1); stride n / m
};

inline std::size_t downsample_stride(std::size_t source, std::size_t target, GridKind kind) {
  if (target < 2 || target > source) throw ShapeError("downsample target must be in [2, source]");
  const std::size_t num = kind == GridKind::Nodes ? source - 1 : source;
  const std::size_t den = kind == GridKind::Nodes ? target - 1 : target;
  if (num % den != 0)
    throw ShapeError("cannot downsample " + std::to_string(source) + " to " + std::to_string(target) +
                     " with an integer stride");
  return num / den;
}

/// Keeps every stride-th point of the last two axes; leading axes are untouched.
inline Tensor downsample(const Tensor& x, std::size_t target, GridKind kind) {
  if (x.rank() < 2) throw ShapeError("downsample needs at least two axes");
  const std::size_t r = x.rank(), n1 = x.extent(r - 2), n2 = x.extent(r - 1);
  const std::size_t s1 = downsample_stride(n1, target, kind), s2 = downsample_stride(n2, target, kind);
  Shape shape = x.shape();
  shape[r - 2] = shape[r - 1] = target;
  Tensor out(shape);
  const std::size_t lead = x.numel() / (n1 * n2);
  for (std::size_t l = 0; l < lead; ++l)
    for (std::size_t i = 0; i < target; ++i)
      for (std::size_t j = 0; j < target; ++j)
        out[(l * target + i) * target + j] = x[(l * n1 + i * s1) * n2 + j * s2];
  return out;
}

}  // namespace uno::pde
