#pragma once

// 2D incompressible Navier-Stokes in vorticity form on the unit torus:
//   w_t + u . grad w = nu Laplacian w + g,  -Laplacian psi = w,  u = (psi_y, -psi_x).
// Pseudo-spectral in space (2/3-rule dealiasing); Heun for the explicit terms
// combined with Crank-Nicolson for viscosity.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "uno/fft.hpp"
#include "uno/pde/grf.hpp"

namespace uno::pde {

/// Estimated Reynolds number sqrt(0.1) / (nu (2 pi)^1.5) of the forced flow.
inline double reynolds_number(double nu) {
  return std::sqrt(0.1) / (nu * std::pow(2 * std::numbers::pi, 1.5));
}

/// g(x) = 0.1 (sin(2 pi (x1 + x2)) + cos(2 pi (x1 + x2))) on the nodes j / n.
inline Tensor ns_forcing(std::size_t n) {
  Tensor g(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double s = 2 * std::numbers::pi * double(i + j) / double(n);
      g.at(i, j) = 0.1 * (std::sin(s) + std::cos(s));
    }
  return g;
}

/// Fixed-grid, fixed-step integrator. Spectra are half spectra [n, n/2 + 1].
class NsIntegrator {
 public:
  NsIntegrator(std::size_t n, double nu, double dt, const Tensor& forcing) : n_(n), h_(n / 2 + 1), dt_(dt) {
    if (n < 4 || n % 2) throw std::invalid_argument("navier-stokes grid must be even and >= 4");
    if (!(dt > 0) || !(nu >= 0)) throw std::invalid_argument("navier-stokes needs dt > 0 and nu >= 0");
    if (forcing.shape() != Shape{n, n}) throw ShapeError("forcing grid mismatch");
    const std::size_t m = n_ * h_;
    k1_.resize(m);
    k2_.resize(m);
    lap_.resize(m);
    mask_.resize(m);
    cn_minus_.resize(m);
    cn_plus_inv_.resize(m);
    const double two_pi = 2 * std::numbers::pi, cut = double(n) / 3.0;
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < h_; ++j) {
        const std::size_t p = i * h_ + j;
        const long s1 = signed_frequency(i, n_), s2 = long(j);
        // Derivatives vanish on the Nyquist bins, which have no conjugate partner.
        k1_[p] = (2 * s1 == long(n_)) ? 0.0 : two_pi * double(s1);
        k2_[p] = (2 * s2 == long(n_)) ? 0.0 : two_pi * double(s2);
        lap_[p] = two_pi * two_pi * double(s1 * s1 + s2 * s2);
        mask_[p] = (std::abs(double(s1)) <= cut && std::abs(double(s2)) <= cut && p != 0) ? 1.0 : 0.0;
        const double a = 0.5 * nu * dt * lap_[p];
        cn_minus_[p] = 1.0 - a;
        cn_plus_inv_[p] = 1.0 / (1.0 + a);
      }
    g_hat_ = fft::rfftn(forcing, 2);
  }

  std::size_t n() const { return n_; }

  ComplexTensor to_spectrum(const Tensor& w) const { return fft::rfftn(w, 2); }
  Tensor to_grid(const ComplexTensor& w_hat) const { return fft::irfftn(w_hat, 2, n_); }

  /// Dealiased transform of -u . grad w.
  ComplexTensor advection(const ComplexTensor& w_hat) const {
    const Shape hs{n_, h_};
    ComplexTensor u1(hs), u2(hs), w1(hs), w2(hs);
    const cdouble I(0, 1);
    for (std::size_t p = 1; p < n_ * h_; ++p) {
      const cdouble psi = w_hat[p] / lap_[p];
      u1[p] = I * k2_[p] * psi;
      u2[p] = -I * k1_[p] * psi;
      w1[p] = I * k1_[p] * w_hat[p];
      w2[p] = I * k2_[p] * w_hat[p];
    }
    const Tensor gu1 = to_grid(u1), gu2 = to_grid(u2), gw1 = to_grid(w1), gw2 = to_grid(w2);
    Tensor prod(Shape{n_, n_});
    for (std::size_t q = 0; q < n_ * n_; ++q) prod[q] = -(gu1[q] * gw1[q] + gu2[q] * gw2[q]);
    ComplexTensor out = fft::rfftn(prod, 2);
    for (std::size_t p = 0; p < n_ * h_; ++p) out[p] *= mask_[p];
    return out;
  }

  /// One predictor-corrector step.
  ComplexTensor step(const ComplexTensor& w_hat) const {
    const std::size_t m = n_ * h_;
    const ComplexTensor N0 = advection(w_hat);
    ComplexTensor pred(w_hat.shape());
    for (std::size_t p = 0; p < m; ++p)
      pred[p] = (cn_minus_[p] * w_hat[p] + dt_ * (N0[p] + g_hat_[p])) * cn_plus_inv_[p];
    const ComplexTensor N1 = advection(pred);
    ComplexTensor out(w_hat.shape());
    for (std::size_t p = 0; p < m; ++p)
      out[p] = (cn_minus_[p] * w_hat[p] + 0.5 * dt_ * (N0[p] + N1[p]) + dt_ * g_hat_[p]) * cn_plus_inv_[p];
    if (!all_finite(out.data())) throw NumericalError("navier-stokes: non-finite vorticity");
    return out;
  }

 private:
  std::size_t n_, h_;
  double dt_;
  std::vector<double> k1_, k2_, lap_, mask_, cn_minus_, cn_plus_inv_;
  ComplexTensor g_hat_;
};

inline constexpr double kBlowUpThreshold = 1e6;

inline void check_blow_up(const Tensor& w) {
  for (double v : w.data())
    if (!(std::abs(v) <= kBlowUpThreshold)) throw NumericalError("navier-stokes: vorticity blew up");
}

/// Single step on grid values.
inline Tensor ns_step(const Tensor& w, double nu, const Tensor& g, double dt) {
  NsIntegrator integ(w.extent(0), nu, dt, g);
  Tensor out = integ.to_grid(integ.step(integ.to_spectrum(w)));
  check_blow_up(out);
  return out;
}

/// `steps` steps on grid values.
inline Tensor ns_advance(const Tensor& w, double nu, const Tensor& g, double dt, std::size_t steps) {
  NsIntegrator integ(w.extent(0), nu, dt, g);
  ComplexTensor s = integ.to_spectrum(w);
  for (std::size_t k = 0; k < steps; ++k) s = integ.step(s);
  Tensor out = integ.to_grid(s);
  check_blow_up(out);
  return out;
}

struct NsSpec {
  double nu = 1e-3;
  std::size_t horizon = 50;  // T, in unit times
  std::size_t grid = 64;
  double dt = 1e-4;          // upper bound; shrunk so whole steps fill each record interval
  double fps = 1.0;          // records per unit time

  std::size_t frames() const { return std::size_t(std::llround(double(horizon) * fps)) + 1; }
};

struct NsTrajectory {
  Tensor w;  // [T fps + 1, s, s], frame j at time j / fps
  double nu = 0;
  double reynolds = 0;
};

/// Steps per record interval 1 / fps; the step used is interval / steps <= dt.
inline std::size_t ns_steps_per_record(const NsSpec& spec) {
  if (!(spec.fps > 0) || !(spec.dt > 0)) throw std::invalid_argument("navier-stokes: need fps > 0 and dt > 0");
  const double ratio = 1.0 / (spec.fps * spec.dt);
  const double near = std::round(ratio);
  return std::max<std::size_t>(1, std::size_t(std::abs(ratio - near) <= 1e-9 * ratio ? near : std::ceil(ratio)));
}

/// Random initial vorticity evolved under the standard forcing, recorded fps times per unit time.
inline NsTrajectory ns_simulate(const NsSpec& spec, std::uint64_t seed) {
  const double hf = double(spec.horizon) * spec.fps;
  if (std::abs(hf - std::round(hf)) > 1e-9) throw std::invalid_argument("navier-stokes: horizon * fps must be whole");
  const std::size_t steps = ns_steps_per_record(spec);
  const double dt = 1.0 / (spec.fps * double(steps));
  const std::size_t n = spec.grid, frames = spec.frames();
  NsIntegrator integ(n, spec.nu, dt, ns_forcing(n));
  NsTrajectory traj;
  traj.nu = spec.nu;
  traj.reynolds = reynolds_number(spec.nu);
  traj.w = Tensor(Shape{frames, n, n});
  Tensor w = grf_sample(GrfSpec::vorticity(n), seed);
  ComplexTensor s = integ.to_spectrum(w);
  for (std::size_t t = 0; t < frames; ++t) {
    if (t > 0) {
      for (std::size_t k = 0; k < steps; ++k) s = integ.step(s);
      w = integ.to_grid(s);
    }
    check_blow_up(w);
    std::copy(w.data().begin(), w.data().end(), traj.w.data().begin() + std::ptrdiff_t(t * n * n));
  }
  return traj;
}

}  // namespace uno::pde
