#pragma once

// Fourier-domain kernel integration and grid resampling.

#include <vector>

#include "uno/grid_function.hpp"

namespace uno::spectral {

/// Retained mode counts per transformed axis (k_1, ..., k_d).
struct ModeSpec {
  std::vector<std::size_t> modes;

  std::size_t naxes() const { return modes.size(); }

  /// Throws unless 1 <= k_j <= floor(n_j / 2) for every axis of `extents`.
  void check_fits(const std::vector<std::size_t>& extents) const {
    if (extents.size() != modes.size())
      throw ShapeError("mode spec rank does not match grid rank");
    for (std::size_t j = 0; j < modes.size(); ++j)
      if (modes[j] < 1 || modes[j] > extents[j] / 2)
        throw ShapeError("retained modes " + std::to_string(modes[j]) +
                         " exceed the Nyquist limit of a grid of extent " + std::to_string(extents[j]));
  }

  /// Extents of the signed-mode block: 2k_j on leading axes, k_d on the last.
  std::vector<std::size_t> block() const {
    std::vector<std::size_t> b(modes);
    for (std::size_t j = 0; j + 1 < b.size(); ++j) b[j] *= 2;
    return b;
  }

  std::size_t block_size() const { return numel(block()); }

  bool operator==(const ModeSpec&) const = default;
};

/// Shape of the complex weight tensor R: [c_out, c_in, signed-mode block].
inline Shape weight_shape(std::size_t c_in, std::size_t c_out, const ModeSpec& modes) {
  Shape s{c_out, c_in};
  for (auto b : modes.block()) s.push_back(b);
  return s;
}

/// Unnormalized real-to-complex DFT over the grid axes of `v`.
inline Var rfft_nd(Var v) { return ad::rfft(v, v.shape().size() - 2); }

/// Inverse of rfft_nd onto `extents`, scaled by 1/N.
inline Var irfft_nd(Var spec, const std::vector<std::size_t>& extents) {
  const Shape& s = spec.shape();
  if (s.size() != extents.size() + 2) throw ShapeError("irfft_nd: extent rank mismatch");
  for (std::size_t j = 0; j + 1 < extents.size(); ++j)
    if (s[2 + j] != extents[j]) throw ShapeError("irfft_nd: spectrum does not match requested extents");
  return ad::irfft(spec, extents.size(), extents.back());
}

/// F^{-1}(R . F(v)) evaluated on `out_extents`.
///
/// Per retained mode, the output coefficient is the complex channel product
/// R[:, :, k] * v_hat[:, k]; other modes are zero. When the output grid
/// differs from the input grid the coefficients are rescaled by N_out / N_in,
/// so the result samples the same band-limited function on the new grid.
inline Var spectral_conv(Var v, Var weights, const ModeSpec& modes,
                         const std::vector<std::size_t>& out_extents) {
  const Shape& in_shape = v.shape();
  const std::size_t naxes = in_shape.size() - 2;
  if (modes.naxes() != naxes || out_extents.size() != naxes)
    throw ShapeError("spectral_conv: mode/extent rank mismatch");
  const std::vector<std::size_t> in_extents(in_shape.begin() + 2, in_shape.end());
  modes.check_fits(in_extents);
  modes.check_fits(out_extents);
  const Shape& ws = weights.shape();
  if (ws != weight_shape(in_shape[1], ws.at(0), modes))
    throw ShapeError("spectral_conv: weights " + to_string(ws) + " do not match " +
                     std::to_string(in_shape[1]) + " input channels and the mode block");

  Var spec = ad::rfft(v, naxes);
  Var block = ad::mode_truncate(spec, naxes, modes.modes, in_extents.back());
  Var mixed = ad::mode_mix(block, weights);

  Shape out_spec{in_shape[0], ws[0]};
  for (auto e : out_extents) out_spec.push_back(e);
  out_spec.back() = out_extents.back() / 2 + 1;
  const double ratio = double(numel(Shape(out_extents.begin(), out_extents.end()))) /
                       double(numel(Shape(in_extents.begin(), in_extents.end())));
  Var padded = ad::mode_embed(mixed, naxes, modes.modes, out_spec, out_extents.back(), ratio);
  return ad::irfft(padded, naxes, out_extents.back());
}

/// Samples v o s on `out_extents`, where s is the linear map taking the
/// output box onto the input box, by multilinear interpolation. The result
/// lives on `out_domain` (default: the input box).
inline GridFunction resample_grid(const GridFunction& v, const std::vector<std::size_t>& out_extents,
                                  std::optional<Box> out_domain = std::nullopt) {
  if (out_extents.size() != v.naxes()) throw ShapeError("resample_grid: extent rank mismatch");
  GridFunction out;
  out.values = ad::resample(v.values, out_extents, v.boundary);
  out.domain = out_domain ? *out_domain : v.domain;
  out.boundary = v.boundary;
  return out;
}

}  // namespace uno::spectral
