#pragma once

// -div(a grad u) = f on the unit square, u = 0 on the boundary, by the
// conservative five-point scheme on an n x n node grid.

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCore>
#include <cmath>
#include <vector>

#include "uno/tensor.hpp"

namespace uno::pde {

/// Pushforward of a Gaussian field: 12 where the field is >= 0, 3 elsewhere.
inline Tensor darcy_coefficient(const Tensor& field) {
  Tensor a(field.shape());
  for (std::size_t i = 0; i < field.numel(); ++i) a[i] = field[i] >= 0.0 ? 12.0 : 3.0;
  return a;
}

struct DarcySystem {
  Eigen::SparseMatrix<double> A;  // (n-2)^2 interior unknowns, row-major node order
  Eigen::VectorXd b;
};

/// Interface coefficients are arithmetic means of the adjacent nodal values.
inline DarcySystem darcy_system(const Tensor& a, const Tensor& f) {
  if (a.rank() != 2 || a.extent(0) != a.extent(1) || a.shape() != f.shape())
    throw ShapeError("darcy: a and f must be matching square grids");
  const std::size_t n = a.extent(0);
  if (n < 5) throw ShapeError("darcy: grid needs at least 5 nodes per side");
  for (double v : a.data())
    if (!(v > 0)) throw std::invalid_argument("darcy: coefficient must be positive");

  const std::size_t m = n - 2;
  const double inv_h2 = double(n - 1) * double(n - 1);
  auto id = [m](std::size_t i, std::size_t j) { return Eigen::Index((i - 1) * m + (j - 1)); };
  auto face = [&](std::size_t i0, std::size_t j0, std::size_t i1, std::size_t j1) {
    return 0.5 * (a.at(i0, j0) + a.at(i1, j1)) * inv_h2;
  };
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(5 * m * m);
  DarcySystem sys;
  sys.b.resize(Eigen::Index(m * m));
  for (std::size_t i = 1; i + 1 < n; ++i)
    for (std::size_t j = 1; j + 1 < n; ++j) {
      const Eigen::Index r = id(i, j);
      const std::size_t nb[4][2] = {{i - 1, j}, {i + 1, j}, {i, j - 1}, {i, j + 1}};
      double diag = 0;
      for (const auto& q : nb) {
        const double c = face(i, j, q[0], q[1]);
        diag += c;
        const bool interior = q[0] > 0 && q[0] + 1 < n && q[1] > 0 && q[1] + 1 < n;
        if (interior) trip.emplace_back(r, id(q[0], q[1]), -c);
      }
      trip.emplace_back(r, r, diag);
      sys.b[r] = f.at(i, j);
    }
  sys.A.resize(Eigen::Index(m * m), Eigen::Index(m * m));
  sys.A.setFromTriplets(trip.begin(), trip.end());
  return sys;
}

/// Solves to relative residual `tol` by conjugate gradients; u = 0 on the boundary.
inline Tensor darcy_solve(const Tensor& a, const Tensor& f, double tol = 1e-10) {
  DarcySystem sys = darcy_system(a, f);
  const Eigen::SparseMatrix<double> At = sys.A.transpose();
  if ((sys.A - At).norm() != 0.0) throw NumericalError("darcy: assembled matrix is not symmetric");

  const std::size_t n = a.extent(0), m = n - 2;
  Tensor u(Shape{n, n});
  if (sys.b.squaredNorm() == 0.0) return u;
  Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper> cg;
  cg.setTolerance(tol);
  cg.setMaxIterations(Eigen::Index(20 * m + 1000));
  cg.compute(sys.A);
  const Eigen::VectorXd x = cg.solve(sys.b);
  if (cg.info() != Eigen::Success || !x.allFinite())
    throw NumericalError("darcy: conjugate gradients did not converge (residual " +
                         std::to_string(cg.error()) + " after " + std::to_string(cg.iterations()) + " iterations)");
  for (std::size_t i = 1; i + 1 < n; ++i)
    for (std::size_t j = 1; j + 1 < n; ++j) u.at(i, j) = x[Eigen::Index((i - 1) * m + (j - 1))];
  return u;
}

/// Right-hand side f = 1 on an n x n grid.
inline Tensor darcy_unit_forcing(std::size_t n) { return Tensor(Shape{n, n}, 1.0); }

}  // namespace uno::pde
