#pragma once

// Gaussian random fields N(0, scale (-Laplacian + tau^2)^(-alpha)) synthesized
// in a Laplacian eigenbasis.

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <numbers>

#include "uno/fft.hpp"
#include "uno/random.hpp"
#include "uno/tensor.hpp"

namespace uno::pde {

enum class GrfBasis { NeumannCosine, PeriodicFourier };

struct GrfSpec {
  double tau2 = 9.0;
  double alpha = 2.0;
  double scale = 1.0;
  GrfBasis basis = GrfBasis::NeumannCosine;
  std::size_t n = 64;

  /// Coefficient field of the elliptic benchmark: N(0, (-Laplacian + 9)^-2), zero Neumann.
  static GrfSpec darcy(std::size_t n) { return {9.0, 2.0, 1.0, GrfBasis::NeumannCosine, n}; }
  /// Initial vorticity: N(0, 7^1.5 (-Laplacian + 49)^-2.5) on the unit torus.
  static GrfSpec vorticity(std::size_t n) { return {49.0, 2.5, std::pow(7.0, 1.5), GrfBasis::PeriodicFourier, n}; }

  void validate() const {
    if (!(alpha > 1)) throw std::invalid_argument("GRF exponent must exceed 1");
    if (!(scale > 0)) throw std::invalid_argument("GRF scale must be positive");
    if (!(tau2 >= 0)) throw std::invalid_argument("GRF shift must be non-negative");
    if (n < 4) throw std::invalid_argument("GRF grid must have at least 4 points");
  }

  /// Covariance eigenvalue for Laplacian eigenvalue `lambda`.
  double variance(double lambda) const { return scale * std::pow(lambda + tau2, -alpha); }
};

/// Orthonormal Neumann cosine c_k(x) on [0, 1]: 1 for k = 0, sqrt(2) cos(pi k x) otherwise.
inline double neumann_cosine(std::size_t k, double x) {
  return k == 0 ? 1.0 : std::numbers::sqrt2 * std::cos(std::numbers::pi * double(k) * x);
}

/// Signed frequency of FFT bin j on an n-point axis.
inline long signed_frequency(std::size_t j, std::size_t n) {
  return j <= n / 2 ? long(j) : long(j) - long(n);
}

/// One field on an n x n grid. Neumann fields live on the nodes j / (n - 1)
/// and use modes 0 <= k_j < n; periodic fields live on j / n, use every FFT
/// bin and have the k = 0 coefficient removed.
inline Tensor grf_sample(const GrfSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t n = spec.n;
  Rng rng = stream(seed, 0x6ef);
  std::normal_distribution<double> normal;
  Tensor out(Shape{n, n});

  if (spec.basis == GrfBasis::NeumannCosine) {
    using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Mat coef(n, n), basis(n, n);
    const double pi2 = std::numbers::pi * std::numbers::pi;
    for (std::size_t k1 = 0; k1 < n; ++k1)
      for (std::size_t k2 = 0; k2 < n; ++k2)
        coef(k1, k2) = normal(rng) * std::sqrt(spec.variance(pi2 * double(k1 * k1 + k2 * k2)));
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t j = 0; j < n; ++j) basis(k, j) = neumann_cosine(k, double(j) / double(n - 1));
    Eigen::Map<Mat>(out.data().data(), n, n) = basis.transpose() * coef * basis;
    return out;
  }

  // w(x) = Re sum_k sqrt(lambda_k) Z_k e^{2 pi i k.x}, Z_k standard complex normal;
  // the covariance is sum_k lambda_k cos(2 pi k.(x - y)).
  ComplexTensor c(Shape{n, n});
  const double four_pi2 = 4 * std::numbers::pi * std::numbers::pi;
  for (std::size_t j1 = 0; j1 < n; ++j1)
    for (std::size_t j2 = 0; j2 < n; ++j2) {
      const double re = normal(rng), im = normal(rng);
      const long k1 = signed_frequency(j1, n), k2 = signed_frequency(j2, n);
      if (k1 == 0 && k2 == 0) continue;
      const double s = std::sqrt(spec.variance(four_pi2 * double(k1 * k1 + k2 * k2)));
      c.at(j1, j2) = s * cdouble(re, im);
    }
  fft::transform_trailing(c, 2, true);
  for (std::size_t i = 0; i < n * n; ++i) out[i] = c[i].real();
  // Removes the roundoff mean so the field is zero-mean to machine precision.
  double mean = 0;
  for (double v : out.data()) mean += v;
  mean /= double(n * n);
  for (double& v : out.data()) v -= mean;
  return out;
}

/// Analytic covariance of grf_sample between grid points p and q.
inline double grf_covariance(const GrfSpec& spec, std::array<std::size_t, 2> p, std::array<std::size_t, 2> q) {
  const std::size_t n = spec.n;
  double s = 0;
  if (spec.basis == GrfBasis::NeumannCosine) {
    const double pi2 = std::numbers::pi * std::numbers::pi, h = 1.0 / double(n - 1);
    for (std::size_t k1 = 0; k1 < n; ++k1)
      for (std::size_t k2 = 0; k2 < n; ++k2)
        s += spec.variance(pi2 * double(k1 * k1 + k2 * k2)) * neumann_cosine(k1, p[0] * h) *
             neumann_cosine(k2, p[1] * h) * neumann_cosine(k1, q[0] * h) * neumann_cosine(k2, q[1] * h);
    return s;
  }
  const double four_pi2 = 4 * std::numbers::pi * std::numbers::pi;
  for (std::size_t j1 = 0; j1 < n; ++j1)
    for (std::size_t j2 = 0; j2 < n; ++j2) {
      const long k1 = signed_frequency(j1, n), k2 = signed_frequency(j2, n);
      if (k1 == 0 && k2 == 0) continue;
      const double phase = 2 * std::numbers::pi *
                           (double(k1) * (double(p[0]) - double(q[0])) + double(k2) * (double(p[1]) - double(q[1]))) /
                           double(n);
      s += spec.variance(four_pi2 * double(k1 * k1 + k2 * k2)) * std::cos(phase);
    }
  return s;
}

/// Coefficient of the constant mode of a Neumann field (trapezoid mean, exact
/// for the modes the sampler uses).
inline double neumann_dc_coefficient(const Tensor& field) {
  const std::size_t n = field.extent(0);
  auto w = [n](std::size_t j) { return (j == 0 || j + 1 == n) ? 0.5 : 1.0; };
  double s = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) s += w(i) * w(j) * field.at(i, j);
  return s / double((n - 1) * (n - 1));
}

}  // namespace uno::pde
