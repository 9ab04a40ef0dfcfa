#pragma once

// Operator building blocks: pointwise lifting/projection, the nonlinear
// integral layer, skip concatenation and positional channels.

#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include "uno/random.hpp"
#include "uno/spectral.hpp"

namespace uno {

/// Point-by-point channel map; stages are joined by GELU.
struct PointwiseMap {
  std::vector<Tensor> weights;  // stage s: [c_out_s, c_in_s]
  std::vector<Tensor> biases;   // stage s: [c_out_s]

  std::size_t in_channels() const { return weights.front().extent(1); }
  std::size_t out_channels() const { return weights.back().extent(0); }

  void validate() const {
    if (weights.empty() || weights.size() != biases.size())
      throw ShapeError("pointwise map needs one bias per weight stage");
    for (std::size_t s = 0; s < weights.size(); ++s) {
      if (weights[s].rank() != 2 || biases[s].shape() != Shape{weights[s].extent(0)})
        throw ShapeError("pointwise map stage " + std::to_string(s) + " is malformed");
      if (s > 0 && weights[s].extent(1) != weights[s - 1].extent(0))
        throw ShapeError("pointwise map stages do not chain");
      if (!all_finite(weights[s].data()) || !all_finite(biases[s].data()))
        throw NumericalError("pointwise map has non-finite entries");
    }
  }
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
inline void init_uniform_fan_in(Tensor& w, Tensor& b, Rng& rng) {
  const double bound = 1.0 / std::sqrt(double(w.extent(1)));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& x : w.data()) x = u(rng);
  for (double& x : b.data()) x = u(rng);
}

/// Pointwise map through the given widths, e.g. {3, 128, 32}.
inline PointwiseMap make_pointwise(const std::vector<std::size_t>& widths, Rng& rng) {
  if (widths.size() < 2) throw ShapeError("pointwise map needs at least two widths");
  PointwiseMap m;
  for (std::size_t s = 0; s + 1 < widths.size(); ++s) {
    m.weights.emplace_back(Shape{widths[s + 1], widths[s]});
    m.biases.emplace_back(Shape{widths[s + 1]});
    init_uniform_fan_in(m.weights.back(), m.biases.back(), rng);
  }
  return m;
}

/// Two-stage map c_in -> 4 max(c_in, c_out) -> c_out.
inline PointwiseMap make_two_stage(std::size_t c_in, std::size_t c_out, Rng& rng) {
  return make_pointwise({c_in, 4 * std::max(c_in, c_out), c_out}, rng);
}

inline Var apply_pointwise(Binder& bind, const PointwiseMap& m, Var x) {
  if (x.shape().at(1) != m.in_channels())
    throw ShapeError("pointwise map expects " + std::to_string(m.in_channels()) + " channels, got " +
                     std::to_string(x.shape()[1]));
  for (std::size_t s = 0; s < m.weights.size(); ++s) {
    if (s > 0) x = ad::gelu(x);
    x = ad::channel_linear(x, bind(m.weights[s]), bind(m.biases[s]));
  }
  return x;
}

/// v0(x) = P(a(x)) on the same grid and domain.
inline GridFunction lift(Binder& bind, const GridFunction& a, const PointwiseMap& P) {
  return {apply_pointwise(bind, P, a.values), a.domain, a.boundary};
}

/// u(x) = Q(v(x)) on the same grid and domain.
inline GridFunction project(Binder& bind, const GridFunction& v, const PointwiseMap& Q) {
  return {apply_pointwise(bind, Q, v.values), v.domain, v.boundary};
}

/// sigma(F^{-1}(R . F(v)) + W v(s(x)) + b) onto a grid scaled by `factors`.
struct IntegralLayer {
  ComplexTensor R;  // [c_out, c_in, signed-mode block]
  spectral::ModeSpec modes;
  Tensor W;     // [c_out, c_in]
  Tensor bias;  // [c_out]
  std::vector<double> factors;  // per grid axis; the trailing axis is time for 3D layers
  bool activation = true;

  std::size_t c_in() const { return W.extent(1); }
  std::size_t c_out() const { return W.extent(0); }

  void validate() const {
    if (W.rank() != 2 || bias.shape() != Shape{W.extent(0)})
      throw ShapeError("integral layer residual/bias shapes are malformed");
    if (R.shape() != spectral::weight_shape(c_in(), c_out(), modes))
      throw ShapeError("integral layer: R " + to_string(R.shape()) + " disagrees with W " +
                       to_string(W.shape()) + " and the mode block");
    if (factors.size() != modes.naxes()) throw ShapeError("integral layer: one factor per grid axis");
    for (double f : factors)
      if (!(f > 0) || !std::isfinite(f)) throw ShapeError("integral layer factors must be positive");
  }
};

/// Spectral weights ~ complex normal with std 1 / (c_in prod k_j); W, b uniform fan-in.
inline IntegralLayer make_integral_layer(std::size_t c_in, std::size_t c_out, spectral::ModeSpec modes,
                                         std::vector<double> factors, bool activation, Rng& rng) {
  IntegralLayer L;
  L.R = ComplexTensor(spectral::weight_shape(c_in, c_out, modes));
  double prod = double(c_in);
  for (auto k : modes.modes) prod *= double(k);
  std::normal_distribution<double> n(0.0, 1.0 / prod / std::numbers::sqrt2);
  for (cdouble& r : L.R.data()) r = {n(rng), n(rng)};
  L.W = Tensor(Shape{c_out, c_in});
  L.bias = Tensor(Shape{c_out});
  init_uniform_fan_in(L.W, L.bias, rng);
  L.modes = std::move(modes);
  L.factors = std::move(factors);
  L.activation = activation;
  L.validate();
  return L;
}

/// round(factor * n) per axis, never contracting below 4 points (an axis
/// already shorter than that is left as is).
inline std::vector<std::size_t> scaled_extents(const std::vector<std::size_t>& extents,
                                               const std::vector<double>& factors) {
  constexpr std::size_t kMinExtent = 4;
  std::vector<std::size_t> out(extents.size());
  for (std::size_t j = 0; j < extents.size(); ++j) {
    const double v = std::round(factors.at(j) * double(extents[j]));
    if (v < 1) throw ShapeError("scaled grid collapses below one point");
    out[j] = std::max(std::size_t(v), std::min(kMinExtent, extents[j]));
  }
  return out;
}

/// Applies `layer`; `out_extents` replaces round(factor * n) when replaying
/// recorded encoder extents in a decoder.
inline GridFunction integral_layer_apply(Binder& bind, const GridFunction& v, const IntegralLayer& layer,
                                         std::optional<std::vector<std::size_t>> out_extents = std::nullopt) {
  if (v.channels() != layer.c_in())
    throw ShapeError("integral layer expects " + std::to_string(layer.c_in()) + " channels, got " +
                     std::to_string(v.channels()));
  const auto in_ext = v.extents();
  const auto out_ext = out_extents ? *out_extents : scaled_extents(in_ext, layer.factors);
  if (out_ext.size() != in_ext.size()) throw ShapeError("integral layer: output extent rank mismatch");

  Var k = spectral::spectral_conv(v.values, bind(layer.R), layer.modes, out_ext);
  Var w = ad::channel_linear(ad::resample(v.values, out_ext, v.boundary), bind(layer.W), bind(layer.bias));
  Var y = ad::add(k, w);
  if (layer.activation) y = ad::gelu(y);
  return {y, v.domain.scaled(layer.factors), v.boundary};
}

/// [enc; dec] channel-wise; both must live on the same grid and domain.
inline GridFunction concat_skip(const GridFunction& enc, const GridFunction& dec) {
  if (enc.extents() != dec.extents())
    throw ShapeError("skip connection grids differ: " + to_string(enc.tensor().shape()) + " vs " +
                     to_string(dec.tensor().shape()));
  if (!enc.domain.approx_equal(dec.domain) || enc.boundary != dec.boundary)
    throw ShapeError("skip connection domains differ");
  return {ad::concat({enc.values, dec.values}, 1), dec.domain, dec.boundary};
}

enum class EmbeddingKind { None, Torus2d, Box };

inline std::size_t embedding_channels(EmbeddingKind kind, std::size_t spatial_axes, bool temporal) {
  std::size_t c = 0;
  if (kind == EmbeddingKind::Torus2d) c = 4;
  if (kind == EmbeddingKind::Box) c = spatial_axes;
  return c + (temporal ? 1 : 0);
}

/// Positional channels [batch, c, extents...]. Spatial axes come first;
/// when `temporal` is set the trailing axis holds frames t_j = (j + 1) / n_t
/// of the normalized input window (0, 1].
inline Tensor positional_embedding(const std::vector<std::size_t>& extents, EmbeddingKind kind,
                                   std::size_t batch = 1, bool temporal = false) {
  const std::size_t spatial = extents.size() - (temporal ? 1 : 0);
  if (kind == EmbeddingKind::Torus2d && spatial != 2)
    throw ShapeError("torus embedding needs two spatial axes");
  const std::size_t c = embedding_channels(kind, spatial, temporal);
  Shape shape{batch, c};
  shape.insert(shape.end(), extents.begin(), extents.end());
  Tensor out(shape);
  if (c == 0) return out;

  const std::size_t pts = numel(Shape(extents.begin(), extents.end()));
  const Shape strides = strides_of(Shape(extents.begin(), extents.end()));
  std::vector<double> x(extents.size());
  std::vector<double> channel(c);
  for (std::size_t p = 0; p < pts; ++p) {
    for (std::size_t a = 0; a < extents.size(); ++a) {
      const std::size_t j = (p / strides[a]) % extents[a];
      const bool time_axis = temporal && a + 1 == extents.size();
      if (time_axis)
        x[a] = double(j + 1) / double(extents[a]);
      else if (kind == EmbeddingKind::Torus2d)
        x[a] = double(j) / double(extents[a]);
      else
        x[a] = extents[a] > 1 ? double(j) / double(extents[a] - 1) : 0.0;
    }
    std::size_t ch = 0;
    if (kind == EmbeddingKind::Torus2d) {
      const double th = 2 * std::numbers::pi * x[0], ph = 2 * std::numbers::pi * x[1];
      channel[ch++] = 0.5 * std::sin(th);
      channel[ch++] = 0.5 * std::cos(th);
      channel[ch++] = 0.5 * std::sin(ph);
      channel[ch++] = 0.5 * std::cos(ph);
    } else if (kind == EmbeddingKind::Box) {
      for (std::size_t a = 0; a < spatial; ++a) channel[ch++] = x[a];
    }
    if (temporal) channel[ch++] = x.back();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t q = 0; q < c; ++q) out[(b * c + q) * pts + p] = channel[q];
  }
  return out;
}

}  // namespace uno
