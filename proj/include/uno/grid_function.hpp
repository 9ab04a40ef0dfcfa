#pragma once

// Discretized vector-valued functions on a box, carried through the tape.

#include <cmath>
#include <unordered_map>
#include <vector>

#include "uno/autodiff.hpp"

namespace uno {

using ad::Boundary;
using ad::Tape;
using ad::Var;

/// Axis-aligned box (lo_j, hi_j) per grid axis; the measure is Lebesgue.
struct Box {
  std::vector<double> lo, hi;

  static Box unit(std::size_t naxes) { return {std::vector<double>(naxes, 0.0), std::vector<double>(naxes, 1.0)}; }

  std::size_t naxes() const { return lo.size(); }

  /// Box whose axis j keeps its origin and has length scaled by factor[j].
  Box scaled(const std::vector<double>& factor) const {
    Box b = *this;
    for (std::size_t j = 0; j < naxes(); ++j) b.hi[j] = lo[j] + factor.at(j) * (hi[j] - lo[j]);
    return b;
  }

  bool approx_equal(const Box& other, double rtol = 1e-12) const {
    if (naxes() != other.naxes()) return false;
    for (std::size_t j = 0; j < naxes(); ++j) {
      const double scale = std::max({1.0, std::abs(hi[j]), std::abs(other.hi[j])});
      if (std::abs(lo[j] - other.lo[j]) > rtol * scale || std::abs(hi[j] - other.hi[j]) > rtol * scale)
        return false;
    }
    return true;
  }
};

/// Samples of v: D -> R^c stored as [batch, channels, n_1, ..., n_d].
struct GridFunction {
  Var values;
  Box domain;
  std::vector<Boundary> boundary;

  const Tensor& tensor() const { return values.value(); }
  std::size_t batch() const { return tensor().extent(0); }
  std::size_t channels() const { return tensor().extent(1); }
  std::size_t naxes() const { return tensor().rank() - 2; }
  std::vector<std::size_t> extents() const {
    const Shape& s = tensor().shape();
    return {s.begin() + 2, s.end()};
  }
};

/// Validates the stored invariants (channels >= 1, extents >= 4, positive box).
inline void validate(const GridFunction& g) {
  const Tensor& t = g.tensor();
  if (t.rank() < 3) throw ShapeError("grid function needs [batch, channels, grid...] layout");
  if (g.domain.naxes() != g.naxes() || g.boundary.size() != g.naxes())
    throw ShapeError("grid function domain/boundary rank mismatch");
  for (auto e : g.extents())
    if (e < 4) throw ShapeError("grid extents must be >= 4, got " + to_string(t.shape()));
  for (std::size_t j = 0; j < g.naxes(); ++j)
    if (!(g.domain.hi[j] > g.domain.lo[j])) throw ShapeError("domain box extents must be positive");
}

/// Wraps a constant tensor as a grid function on `tape`.
inline GridFunction make_grid_function(Tape& tape, Tensor values, Box domain,
                                       std::vector<Boundary> boundary) {
  GridFunction g{tape.constant(std::move(values)), std::move(domain), std::move(boundary)};
  validate(g);
  return g;
}

/// Maps parameter storage onto tape leaves, creating each leaf once.
class Binder {
 public:
  explicit Binder(Tape& tape, bool as_params = true) : tape_(tape), as_params_(as_params) {}

  Tape& tape() const { return tape_; }

  Var operator()(const Tensor& p) { return bind(&p, [&] { return ad::Value(p); }); }
  Var operator()(const ComplexTensor& p) { return bind(&p, [&] { return ad::Value(p); }); }

  /// Routes the parameter at `address` to an existing node.
  void assign(const void* address, Var v) { map_[address] = v; }

  /// Leaf created for the parameter at `address`, if any.
  std::optional<Var> find(const void* address) const {
    auto it = map_.find(address);
    if (it == map_.end()) return std::nullopt;
    return it->second;
  }

 private:
  template <class Make>
  Var bind(const void* address, Make&& make) {
    auto it = map_.find(address);
    if (it != map_.end()) return it->second;
    Var v = tape_.leaf(make(), as_params_);
    map_.emplace(address, v);
    return v;
  }

  Tape& tape_;
  bool as_params_;
  std::unordered_map<const void*, Var> map_;
};

}  // namespace uno
