#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <numeric>
#include <vector>

#include "dense_eig.hpp"
#include "eigensolver.hpp"
#include "rng.hpp"
#include "spectral_graph.hpp"
#include "tensor_io.hpp"
#include "traversal.hpp"

namespace svmamba {

/// For the grid rotated by q, the original node index found at each rotated
/// position.
inline Permutation rotation_source_map(std::size_t hp, std::size_t wp, QuarterTurn q) {
  Permutation ids(hp * wp);
  std::iota(ids.begin(), ids.end(), 0u);
  std::size_t oh = 0, ow = 0;
  return rotate_grid<std::uint32_t>(ids, hp, wp, 1, q, oh, ow);
}

/// Seeded uniformly random permutation.
inline Permutation random_permutation(std::size_t n, XorShift64Star& rng) {
  Permutation p(n);
  std::iota(p.begin(), p.end(), 0u);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

/// Number of (order, position) slots whose token contents differ bitwise
/// between two plans over their own feature sets.
inline std::size_t content_order_mismatches(const NodeFeatures& xa, const TraversalPlan& a, const NodeFeatures& xb,
                                            const TraversalPlan& b) {
  if (a.orders.size() != b.orders.size() || a.n != b.n || xa.dim != xb.dim) return std::max(a.n, b.n) * 2 * std::max(a.m, b.m) + 1;
  std::size_t bad = 0;
  for (std::size_t t = 0; t < a.orders.size(); ++t)
    for (std::size_t s = 0; s < a.n; ++s) {
      const auto ra = xa.row(a.orders[t][s]);
      const auto rb = xb.row(b.orders[t][s]);
      if (!std::equal(ra.begin(), ra.end(), rb.begin())) ++bad;
    }
  return bad;
}

/// Sine of the largest principal angle between span(U) and span(V), both
/// given as d orthonormal column-stored n-vectors: sqrt(lambda_max(R^T R))
/// with R = V - U (U^T V).
inline double subspace_sine(std::span<const double> u, std::span<const double> v, std::size_t n, std::size_t d) {
  std::vector<double> r(v.begin(), v.end());
  for (std::size_t b = 0; b < d; ++b) {
    for (std::size_t a = 0; a < d; ++a) {
      double proj = 0.0;
      for (std::size_t i = 0; i < n; ++i) proj += u[a * n + i] * v[b * n + i];
      for (std::size_t i = 0; i < n; ++i) r[b * n + i] -= proj * u[a * n + i];
    }
  }
  DenseMatrix g(d);
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += r[a * n + i] * r[b * n + i];
      g(a, b) = g(b, a) = acc;
    }
  const auto eig = dense_eig_oracle(g);
  return std::sqrt(std::max(0.0, eig.values.back()));
}

/// Eigenvectors of `basis` with node i taken from source[i] (relabels the
/// vectors into another node numbering).
inline std::vector<double> gather_vectors(const SpectralBasis& basis, std::span<const std::uint32_t> source,
                                          std::size_t d) {
  std::vector<double> out(basis.n * d);
  for (std::size_t j = 0; j < d; ++j) {
    const auto u = basis.vector(j);
    for (std::size_t i = 0; i < basis.n; ++i) out[j * basis.n + i] = u[source[i]];
  }
  return out;
}

/// End of the eigenvalue cluster that contains index m-1 (exclusive), so that
/// the leading subspace never splits a degenerate group.
inline std::size_t complete_cluster(std::span<const double> values, std::size_t m, double gap_tol = 1e-9) {
  std::size_t end = m;
  while (end < values.size() && std::abs(values[end] - values[end - 1]) < gap_tol) ++end;
  return end;
}

/// Leading eigenpairs of L whose last eigenvalue cluster is complete. `dim`
/// is the subspace size (at least m) and `gap` the distance from its largest
/// eigenvalue to the next one (infinite when the subspace is everything).
struct ClosedSubspace {
  SpectralBasis basis;
  std::size_t dim = 0;
  double gap = 0.0;
};

/// Starts from m+4 Lanczos pairs and widens until the cluster holding the
/// m-th eigenvalue closes: one dense solve for n <= dense_limit, doubling
/// Lanczos windows beyond that.
inline ClosedSubspace closed_leading_subspace(const SparseSymMatrix& l, std::size_t m, double tol,
                                              std::size_t dense_threshold = 64, std::size_t dense_limit = 400) {
  const std::size_t n = l.n;
  EigConfig cfg;
  cfg.tol = tol;
  cfg.dense_threshold = dense_threshold;
  cfg.m = std::min(n, m + 4);
  ClosedSubspace out;
  out.basis = lanczos_smallest(l, cfg);
  while (true) {
    const auto& values = out.basis.eigenvalues;
    out.dim = complete_cluster(values, m);
    if (out.dim < out.basis.m) {
      out.gap = values[out.dim] - values[out.dim - 1];
      return out;
    }
    if (out.basis.m == n) {
      out.gap = std::numeric_limits<double>::infinity();
      return out;
    }
    if (n <= dense_limit) {
      const auto full = dense_eig_oracle(l.to_dense());
      out.basis = SpectralBasis{n, n, full.values, full.vectors};
    } else {
      cfg.m = std::min(n, 2 * out.basis.m);
      out.basis = lanczos_smallest(l, cfg);
    }
  }
}

/// Upper bound on the sine of the largest principal angle between span(U)
/// and the invariant subspace of L for its d smallest eigenvalues, given U's
/// claimed eigenvalues and the spectral gap that separates them from the
/// rest: ||L U - U diag(values)||_F / gap.
inline double invariant_subspace_sine_bound(const SparseSymMatrix& l, std::span<const double> u,
                                            std::span<const double> values, std::size_t d, double gap) {
  if (d >= l.n) return 0.0;
  if (!(gap > 0.0)) return std::numeric_limits<double>::infinity();
  const std::size_t n = l.n;
  std::vector<double> y(n);
  double frob = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const auto col = u.subspan(j * n, n);
    l.multiply(col, y, Stage::Eigensolver);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = y[i] - values[j] * col[i];
      frob += r * r;
    }
  }
  return std::sqrt(frob) / gap;
}

/// P L P^T for node relabeling `perm` (new node i is old node perm[i]).
inline SparseSymMatrix permute_matrix(const SparseSymMatrix& l, std::span<const std::uint32_t> perm) {
  const auto inv = invert_permutation(perm);
  std::vector<Triplet> t;
  t.reserve(l.nnz());
  for (const auto& e : l.triplets()) t.push_back({inv[e.row], inv[e.col], e.value});
  return SparseSymMatrix::from_triplets(l.n, std::move(t));
}

}  // namespace svmamba
