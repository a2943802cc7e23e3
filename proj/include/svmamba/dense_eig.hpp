#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "error.hpp"
#include "sparse.hpp"

namespace svmamba {

/// Full eigendecomposition; vectors are column-stored (vectors[j * n + i]).
struct DenseEigResult {
  std::size_t n = 0;
  std::vector<double> values;
  std::vector<double> vectors;

  std::span<const double> vector(std::size_t j) const { return {vectors.data() + j * n, n}; }
};

/// One-sided (Hestenes) Jacobi eigensolver for symmetric matrices. The input
/// is shifted to B = A + sigma I with sigma above every Gershgorin bound, so B
/// is positive definite and its singular vectors are A's eigenvectors. Plane
/// rotations orthogonalize the columns of B V until every pair is orthogonal
/// to relative precision n * 1e-15; eigenvalues are then the Rayleigh
/// quotients of the columns of V against A. Reference oracle only; it shares
/// no code with the sparse solver.
inline DenseEigResult dense_eig_oracle(const DenseMatrix& input) {
  const std::size_t n = input.n;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(input(i, j) - input(j, i)) > 1e-12)
        throw_argument("dense oracle needs a symmetric matrix; mismatch at (" + std::to_string(i) +
                       "," + std::to_string(j) + ")");

  double shift = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) row += std::abs(input(i, j));
    shift = std::max(shift, row);
  }
  shift += 1.0;

  // Columns of B V and of V, stored as contiguous rows (B is symmetric).
  DenseMatrix u = input;
  DenseMatrix vt(n);
  for (std::size_t i = 0; i < n; ++i) {
    u(i, i) += shift;
    vt(i, i) = 1.0;
  }

  constexpr int kMaxSweeps = 100;
  const double tol = 1e-15 * static_cast<double>(std::max<std::size_t>(n, 1));
  auto rotate = [n](double* x, double* y, double c, double s) {
    for (std::size_t r = 0; r < n; ++r) {
      const double xr = x[r], yr = y[r];
      x[r] = c * xr - s * yr;
      y[r] = s * xr + c * yr;
    }
  };
  for (int sweep = 1;; ++sweep) {
    if (sweep > kMaxSweeps) throw Error(ErrorKind::Convergence, "Jacobi sweeps exhausted");
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double* up = &u(p, 0);
        double* uq = &u(q, 0);
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          alpha += up[r] * up[r];
          beta += uq[r] * uq[r];
          gamma += up[r] * uq[r];
        }
        if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        rotate(up, uq, c, s);
        rotate(&vt(p, 0), &vt(q, 0), c, s);
      }
    }
    if (!rotated) break;
  }

  std::vector<double> values(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double* v = &vt(j, 0);
    double acc = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      double x = 0.0;
      for (std::size_t k = 0; k < n; ++k) x += input(r, k) * v[k];
      acc += v[r] * x;
    }
    values[j] = acc;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return values[x] < values[y]; });
  DenseEigResult out;
  out.n = n;
  out.values.resize(n);
  out.vectors.resize(n * n);
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = values[order[j]];
    for (std::size_t i = 0; i < n; ++i) out.vectors[j * n + i] = vt(order[j], i);
  }
  return out;
}

}  // namespace svmamba
