#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dense_eig.hpp"
#include "error.hpp"
#include "flops.hpp"
#include "rng.hpp"
#include "sparse.hpp"

namespace svmamba {

/// The m smallest eigenpairs, ascending. Eigenvectors are column-stored.
struct SpectralBasis {
  std::size_t n = 0;
  std::size_t m = 0;
  std::vector<double> eigenvalues;
  std::vector<double> vectors;

  std::span<const double> vector(std::size_t j) const { return {vectors.data() + j * n, n}; }
  std::span<double> vector(std::size_t j) { return {vectors.data() + j * n, n}; }

  bool operator==(const SpectralBasis&) const = default;
};

struct EigConfig {
  std::size_t m = 4;
  double tol = 1e-8;
  std::size_t max_iter = 0;  // 0 selects 10 * n
  double eps_sign = 1e-12;
  std::size_t dense_threshold = 64;
  std::uint64_t restart_seed = 0xC0FFEE;
  std::size_t filter_degree = 16;  // polynomial filter degree; 1 is plain Lanczos
};

struct EigReport {
  bool dense_path = false;
  std::size_t iterations = 0;
  std::size_t phases = 0;
  std::vector<double> residuals;
  double max_orthogonality_error = 0.0;
  std::uint64_t flops = 0;
};

namespace detail {

/// Implicit QL with Wilkinson shifts on a symmetric tridiagonal matrix.
/// `diag` is overwritten with the (unsorted) eigenvalues. `z` holds `rows`
/// rows of length n that receive the same plane rotations as the columns of the
/// eigenvector matrix: pass the identity for full vectors, or only its last row
/// to obtain the bottom components needed for Lanczos residual estimates.
inline void tridiagonal_ql(std::vector<double>& diag, std::vector<double> off, std::vector<double>& z,
                           std::size_t rows) {
  const std::size_t n = diag.size();
  off.resize(n, 0.0);
  if (n > 0) off[n - 1] = 0.0;
  std::uint64_t ops = 0;
  constexpr double eps = std::numeric_limits<double>::epsilon();
  for (std::size_t l = 0; l < n; ++l) {
    int iter = 0;
    std::size_t m;
    do {
      for (m = l; m + 1 < n; ++m) {
        const double dd = std::abs(diag[m]) + std::abs(diag[m + 1]);
        if (std::abs(off[m]) <= eps * dd) break;
      }
      if (m != l) {
        if (++iter > 60) throw Error(ErrorKind::Convergence, "tridiagonal QL did not converge");
        double g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
        double r = std::hypot(g, 1.0);
        g = diag[m] - diag[l] + off[l] / (g + std::copysign(r, g));
        double s = 1.0, c = 1.0, p = 0.0;
        bool underflow = false;
        for (std::ptrdiff_t i = static_cast<std::ptrdiff_t>(m) - 1; i >= static_cast<std::ptrdiff_t>(l); --i) {
          const std::size_t iu = static_cast<std::size_t>(i);
          double f = s * off[iu];
          const double b = c * off[iu];
          r = std::hypot(f, g);
          off[iu + 1] = r;
          if (r == 0.0) {
            diag[iu + 1] -= p;
            off[m] = 0.0;
            underflow = true;
            break;
          }
          s = f / r;
          c = g / r;
          g = diag[iu + 1] - p;
          r = (diag[iu] - g) * s + 2.0 * c * b;
          p = s * r;
          diag[iu + 1] = g + p;
          g = c * r - b;
          for (std::size_t k = 0; k < rows; ++k) {
            f = z[k * n + iu + 1];
            z[k * n + iu + 1] = s * z[k * n + iu] + c * f;
            z[k * n + iu] = c * z[k * n + iu] - s * f;
          }
          ops += 20 + 6 * rows;
        }
        if (underflow) continue;
        diag[l] -= p;
        off[l] = g;
        off[m] = 0.0;
      }
    } while (m != l);
  }
  count_ops(Stage::Eigensolver, ops);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

/// Lanczos with full reorthogonalization and explicit locking, run on the
/// polynomial filter B = (I - (L - lo I) / (hi - lo))^d where [lo, hi] is the
/// Gershgorin interval of L. B shares L's eigenvectors and reverses the order
/// of its spectrum, and a degree above one spreads the small end of L's
/// spectrum apart so far fewer (reorthogonalized) steps are needed.
/// Eigenvalues of L are recovered as Rayleigh quotients of the Ritz vectors.
///
/// Phase 0 starts from the constant vector 1/sqrt(n), which is invariant under
/// node relabeling, so its converged Ritz vectors are equivariant. A single
/// Krylov sequence only ever sees one direction per distinct eigenvalue and
/// none orthogonal to the start vector (graph symmetries, repeated
/// eigenvalues), so every later phase restarts from a seeded perturbation of
/// the constant vector, deflated against all locked pairs, and only
/// contributes when it finds something below the current m-th eigenvalue.
class LanczosSolver {
 public:
  LanczosSolver(const SparseSymMatrix& l, const EigConfig& cfg)
      : l_(l), cfg_(cfg), n_(l.n), rng_(cfg.restart_seed),
        max_iter_(cfg.max_iter ? cfg.max_iter : 10 * l.n),
        stop_tol_(cfg.tol * 1e-3), degree_(std::max<std::size_t>(1, cfg.filter_degree)) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = 0; i < n_; ++i) {
      double center = 0.0, radius = 0.0;
      for (std::size_t k = l.row_ptr[i]; k < l.row_ptr[i + 1]; ++k) {
        if (l.col_idx[k] == i) center = l.values[k];
        else radius += std::abs(l.values[k]);
      }
      lo = std::min(lo, center - radius);
      hi = std::max(hi, center + radius);
    }
    lo_ = lo;
    width_ = std::max(hi - lo, 1e-300);
  }

  SpectralBasis solve(EigReport& report) {
    const std::size_t m = cfg_.m;
    std::vector<double> start(n_, 1.0 / std::sqrt(static_cast<double>(n_)));
    run_phase(start, std::min(m, n_), false);

    while (locked_values_.size() < n_) {
      for (std::size_t i = 0; i < n_; ++i)
        start[i] = (0.5 + rng_.next_float()) / std::sqrt(static_cast<double>(n_));
      const bool verify = locked_values_.size() >= m;
      const std::size_t need = verify ? 1 : m - locked_values_.size();
      if (!run_phase(start, need, verify)) break;
    }

    // m smallest locked pairs, ties kept in discovery order.
    std::vector<std::size_t> order(locked_values_.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return locked_values_[a] < locked_values_[b]; });
    if (order.size() < m)
      throw Error(ErrorKind::Convergence, "Lanczos located only " + std::to_string(order.size()) +
                                              " of " + std::to_string(m) + " eigenpairs");
    SpectralBasis basis;
    basis.n = n_;
    basis.m = m;
    basis.eigenvalues.resize(m);
    basis.vectors.resize(m * n_);
    for (std::size_t j = 0; j < m; ++j) {
      basis.eigenvalues[j] = locked_values_[order[j]];
      std::copy(locked_vectors_[order[j]].begin(), locked_vectors_[order[j]].end(),
                basis.vectors.begin() + static_cast<std::ptrdiff_t>(j * n_));
    }
    report.iterations = iterations_;
    report.phases = phases_;
    return basis;
  }

 private:
  /// y = B x
  void apply_filter(const std::vector<double>& x, std::vector<double>& y) {
    y = x;
    for (std::size_t p = 0; p < degree_; ++p) {
      l_.multiply(y, scratch_, Stage::Eigensolver);
      for (std::size_t i = 0; i < n_; ++i) y[i] -= (scratch_[i] - lo_ * y[i]) / width_;
      count_ops(Stage::Eigensolver, 4 * n_);
    }
  }

  /// Eigenvalue of L that maps to filter value mu.
  double to_eigenvalue(double mu) const {
    const double t = 1.0 - std::pow(std::max(mu, 0.0), 1.0 / static_cast<double>(degree_));
    return lo_ + width_ * t;
  }

  void deflate(std::vector<double>& w, std::span<const std::vector<double>> basis) {
    for (const auto& q : basis) axpy(-dot(q, w), q, w);
    count_ops(Stage::Eigensolver, 4 * n_ * basis.size());
  }

  void reorthogonalize(std::vector<double>& w, const std::vector<std::vector<double>>& krylov) {
    deflate(w, locked_vectors_);
    deflate(w, krylov);
  }

  double norm(std::span<const double> v) {
    count_ops(Stage::Eigensolver, 2 * n_ + 1);
    return std::sqrt(dot(v, v));
  }

  /// Runs one Krylov sequence. Returns false when the phase contributed
  /// nothing (complement exhausted or verification passed).
  bool run_phase(std::vector<double> start, std::size_t need, bool verify) {
    ++phases_;
    const std::size_t free_dim = n_ - locked_values_.size();
    const double start_norm = norm(start);
    reorthogonalize(start, {});
    reorthogonalize(start, {});
    const double q0_norm = norm(start);
    if (q0_norm <= 1e-10 * start_norm) return false;
    for (double& v : start) v /= q0_norm;
    count_ops(Stage::Eigensolver, n_);

    std::vector<std::vector<double>> krylov;
    krylov.push_back(std::move(start));
    std::vector<double> alpha, beta;
    std::vector<double> w(n_);
    const double threshold =
        verify ? locked_sorted_value(cfg_.m - 1) - 1e-9 : std::numeric_limits<double>::infinity();
    bool widened = false;

    for (;;) {
      if (++iterations_ > max_iter_) {
        throw Error(ErrorKind::Convergence,
                    "Lanczos exceeded " + std::to_string(max_iter_) + " iterations; best residual " +
                        format_double(best_residual_));
      }
      const std::size_t j = krylov.size() - 1;
      apply_filter(krylov[j], w);
      const double a = dot(krylov[j], w);
      axpy(-a, krylov[j], w);
      if (j > 0) axpy(-beta[j - 1], krylov[j - 1], w);
      count_ops(Stage::Eigensolver, 2 * n_ + (j > 0 ? 4 * n_ : 2 * n_));
      const double before = norm(w);
      reorthogonalize(w, krylov);
      double b = norm(w);
      if (b < 0.7071 * before) {
        reorthogonalize(w, krylov);
        b = norm(w);
      }
      alpha.push_back(a);

      const std::size_t dim = krylov.size();
      const bool exhausted = b < 1e-14 || dim >= free_dim;
      const std::size_t stride = dim < 16 ? 1 : 4;
      const bool check = exhausted || (dim >= need && (dim - need) % stride == 0);
      if (check) {
        std::vector<double> theta = alpha;
        std::vector<double> last(dim, 0.0);
        last[dim - 1] = 1.0;
        tridiagonal_ql(theta, beta, last, 1);
        const auto idx = descending_index(theta);
        // ||L y - lambda y|| <= (hi - lo) * ||B y - mu y|| / mu for this filter
        auto converged = [&](std::size_t count) {
          bool ok = true;
          for (std::size_t t = 0; t < std::min(count, dim); ++t) {
            const double mu = std::max(theta[idx[t]], 1e-300);
            const double res = width_ * b * std::abs(last[idx[t]]) / mu;
            best_residual_ = std::min(best_residual_, res);
            if (res > stop_tol_) ok = false;
          }
          return ok;
        };
        if (exhausted) {
          // invariant subspace: every Ritz pair is exact, lock them all
          lock_ritz(krylov, alpha, beta, dim, std::numeric_limits<double>::infinity());
          return true;
        }
        if (converged(need)) {
          if (verify && !widened) {
            if (to_eigenvalue(theta[idx[0]]) >= threshold) return false;
            // something sits below the current m-th eigenvalue: converge a full set
            widened = true;
            need = std::min(cfg_.m, free_dim);
          }
          if (converged(need)) {
            lock_ritz(krylov, alpha, beta, need, threshold);
            return true;
          }
        }
      }
      next_vector(krylov, beta, w, b);
    }
  }

  void next_vector(std::vector<std::vector<double>>& krylov, std::vector<double>& beta,
                   const std::vector<double>& w, double b) {
    beta.push_back(b);
    std::vector<double> q(n_);
    for (std::size_t i = 0; i < n_; ++i) q[i] = w[i] / b;
    count_ops(Stage::Eigensolver, n_);
    krylov.push_back(std::move(q));
  }

  static std::vector<std::size_t> descending_index(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
    return idx;
  }

  double locked_sorted_value(std::size_t k) const {
    std::vector<double> v = locked_values_;
    std::sort(v.begin(), v.end());
    return v[k];
  }

  /// Forms the Ritz vectors of the `count` largest filter values and locks
  /// them with their Rayleigh quotients. Verification phases keep only pairs
  /// strictly below `threshold`.
  void lock_ritz(const std::vector<std::vector<double>>& krylov, const std::vector<double>& alpha,
                 const std::vector<double>& beta, std::size_t count, double threshold) {
    const std::size_t dim = krylov.size();
    std::vector<double> theta = alpha;
    std::vector<double> z(dim * dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) z[i * dim + i] = 1.0;
    tridiagonal_ql(theta, beta, z, dim);
    const auto idx = descending_index(theta);
    count = std::min(count, dim);
    std::vector<double> ly(n_);
    for (std::size_t t = 0; t < count; ++t) {
      const std::size_t col = idx[t];
      std::vector<double> y(n_, 0.0);
      for (std::size_t k = 0; k < dim; ++k) axpy(z[k * dim + col], krylov[k], y);
      count_ops(Stage::Eigensolver, 2 * n_ * dim);
      const double ny = norm(y);
      for (double& v : y) v /= ny;
      count_ops(Stage::Eigensolver, n_);
      l_.multiply(y, ly, Stage::Eigensolver);
      const double lambda = dot(y, ly);
      count_ops(Stage::Eigensolver, 2 * n_);
      if (!(lambda < threshold)) continue;
      locked_values_.push_back(lambda);
      locked_vectors_.push_back(std::move(y));
    }
  }

  const SparseSymMatrix& l_;
  EigConfig cfg_;
  std::size_t n_;
  XorShift64Star rng_;
  std::size_t max_iter_;
  double stop_tol_;
  std::size_t degree_;
  double lo_ = 0.0;
  double width_ = 1.0;
  std::vector<double> scratch_ = std::vector<double>(n_);
  std::size_t iterations_ = 0;
  std::size_t phases_ = 0;
  double best_residual_ = std::numeric_limits<double>::infinity();
  std::vector<double> locked_values_;
  std::vector<std::vector<double>> locked_vectors_;
};

}  // namespace detail

inline std::vector<double> eigen_residuals(const SparseSymMatrix& l, const SpectralBasis& basis) {
  std::vector<double> out(basis.m);
  std::vector<double> y(basis.n);
  for (std::size_t j = 0; j < basis.m; ++j) {
    const auto u = basis.vector(j);
    l.multiply(u, y, Stage::Eigensolver);
    double acc = 0.0;
    for (std::size_t i = 0; i < basis.n; ++i) {
      const double r = y[i] - basis.eigenvalues[j] * u[i];
      acc += r * r;
    }
    count_ops(Stage::Eigensolver, 4 * basis.n + 1);
    out[j] = std::sqrt(acc);
  }
  return out;
}

inline double max_orthogonality_error(const SpectralBasis& basis) {
  double worst = 0.0;
  for (std::size_t a = 0; a < basis.m; ++a)
    for (std::size_t b = 0; b < basis.m; ++b) {
      const double d = detail::dot(basis.vector(a), basis.vector(b));
      worst = std::max(worst, std::abs(d - (a == b ? 1.0 : 0.0)));
    }
  return worst;
}

/// m smallest eigenpairs of a symmetric Laplacian. Matrices with at most
/// `dense_threshold` rows go through the dense Jacobi path (not flop-counted).
inline SpectralBasis lanczos_smallest(const SparseSymMatrix& l, const EigConfig& cfg,
                                      EigReport* report = nullptr) {
  if (cfg.m == 0 || cfg.m > l.n)
    throw_argument("eigenpair count m=" + std::to_string(cfg.m) + " must lie in [1, n=" +
                   std::to_string(l.n) + "]");
  if (!(cfg.tol > 0.0)) throw_argument("eigensolver tolerance must be positive");
  EigReport local;
  EigReport& rep = report ? *report : local;
  rep = EigReport{};
  const std::uint64_t flops_before = count_flops(Stage::Eigensolver);

  SpectralBasis basis;
  if (l.n <= cfg.dense_threshold) {
    const auto full = dense_eig_oracle(l.to_dense());
    basis.n = l.n;
    basis.m = cfg.m;
    basis.eigenvalues.assign(full.values.begin(), full.values.begin() + static_cast<std::ptrdiff_t>(cfg.m));
    basis.vectors.assign(full.vectors.begin(), full.vectors.begin() + static_cast<std::ptrdiff_t>(cfg.m * l.n));
    rep.dense_path = true;
  } else {
    detail::LanczosSolver solver(l, cfg);
    basis = solver.solve(rep);
  }
  rep.residuals = eigen_residuals(l, basis);
  rep.max_orthogonality_error = max_orthogonality_error(basis);
  rep.flops = count_flops(Stage::Eigensolver) - flops_before;
  for (std::size_t j = 0; j < basis.m; ++j) {
    if (!(rep.residuals[j] <= cfg.tol))
      throw Error(ErrorKind::Convergence, "eigenpair " + std::to_string(j) + " residual " +
                                              format_double(rep.residuals[j]) + " exceeds tolerance");
  }
  return basis;
}

/// Flips each eigenvector so that its first entry with magnitude above
/// `eps_sign` is positive. "First" follows `reference_order` when given,
/// otherwise node index order.
inline SpectralBasis canonicalize_signs(SpectralBasis basis, double eps_sign,
                                        std::span<const std::uint32_t> reference_order = {}) {
  if (!reference_order.empty() && reference_order.size() != basis.n)
    throw_shape("sign reference order has wrong length");
  for (std::size_t j = 0; j < basis.m; ++j) {
    auto u = basis.vector(j);
    bool found = false;
    for (std::size_t t = 0; t < basis.n; ++t) {
      const std::size_t i = reference_order.empty() ? t : reference_order[t];
      if (std::abs(u[i]) > eps_sign) {
        if (u[i] < 0.0)
          for (double& v : u) v = -v;
        found = true;
        break;
      }
    }
    if (!found)
      throw Error(ErrorKind::DegenerateVector,
                  "eigenvector " + std::to_string(j) + " has no entry above the sign threshold");
  }
  return basis;
}

/// Groups of consecutive eigenvalues closer than `gap_tol`; used to flag
/// basis-dependent eigenvectors.
inline std::vector<std::pair<std::size_t, std::size_t>> degenerate_clusters(std::span<const double> values,
                                                                            double gap_tol = 1e-9) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t start = 0;
  for (std::size_t j = 1; j <= values.size(); ++j) {
    if (j == values.size() || std::abs(values[j] - values[j - 1]) >= gap_tol) {
      if (j - start > 1) out.emplace_back(start, j);
      start = j;
    }
  }
  return out;
}

}  // namespace svmamba
