#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "error.hpp"
#include "flops.hpp"
#include "patch_embed.hpp"
#include "sparse.hpp"

namespace svmamba {

/// One feature vector per graph node; node i is patch (i / wp, i % wp).
struct NodeFeatures {
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<double> data;

  std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
};

inline NodeFeatures flatten_features(const FeatureMap& f) {
  return NodeFeatures{f.tokens(), f.channels, f.data};
}

/// Relabels nodes: result node i carries the features of input node perm[i].
inline NodeFeatures permute_nodes(const NodeFeatures& x, std::span<const std::uint32_t> perm) {
  NodeFeatures out{x.n, x.dim, std::vector<double>(x.data.size())};
  for (std::size_t i = 0; i < x.n; ++i) {
    const auto src = x.row(perm[i]);
    std::copy(src.begin(), src.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * x.dim));
  }
  return out;
}

enum class SigmaMode { AllPairsMean };

struct GraphConfig {
  std::size_t k = 5;
  SigmaMode sigma_mode = SigmaMode::AllPairsMean;
  double sigma_floor = 1e-12;
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    const double d = a[c] - b[c];
    acc += d * d;
  }
  return acc;
}

inline std::uint64_t squared_distance_ops(std::size_t dim) { return dim == 0 ? 0 : 3 * dim - 1; }

/// Packed strict upper triangle of squared Euclidean distances.
class PairwiseDistances {
 public:
  explicit PairwiseDistances(const NodeFeatures& x) : n_(x.n), d2_(x.n * (x.n ? x.n - 1 : 0) / 2) {
    std::size_t k = 0;
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = i + 1; j < n_; ++j) d2_[k++] = squared_distance(x.row(i), x.row(j));
    count_ops(Stage::Adjacency, d2_.size() * squared_distance_ops(x.dim));
  }

  std::size_t size() const { return n_; }

  double squared(std::size_t i, std::size_t j) const {
    if (i == j) return 0.0;
    if (i > j) std::swap(i, j);
    return d2_[i * (2 * n_ - i - 1) / 2 + (j - i - 1)];
  }

  std::size_t bytes() const { return d2_.size() * sizeof(double); }

 private:
  std::size_t n_;
  std::vector<double> d2_;
};

namespace detail {

/// Sum of values in ascending order, so the result depends only on the multiset.
inline double ordered_sum(std::vector<double>& values) {
  std::sort(values.begin(), values.end());
  double acc = 0.0;
  for (double v : values) acc += v;
  return acc;
}

}  // namespace detail

/// Mean Euclidean distance over all unordered pairs, floored at `floor`.
/// Each row's distances and then the row totals are summed in sorted order, so
/// relabeling the nodes cannot change a single bit of the result.
inline double sigma_estimate(const PairwiseDistances& dist, double floor) {
  const std::size_t n = dist.size();
  if (n < 2) throw_argument("sigma needs at least two nodes, got " + std::to_string(n));
  std::vector<double> row(n - 1);
  std::vector<double> totals(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t k = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) row[k++] = std::sqrt(dist.squared(i, j));
    totals[i] = detail::ordered_sum(row);
  }
  const double total = detail::ordered_sum(totals);
  // one sqrt per unordered pair, (n-2) adds per row, (n-1) adds over rows, one divide
  count_ops(Stage::Adjacency, n * (n - 1) / 2 + n * (n - 2) + (n - 1) + 1);
  const double mean = total / static_cast<double>(n * (n - 1));
  return std::max(mean, floor);
}

inline double sigma_estimate(const NodeFeatures& x, double floor) {
  if (x.n < 2) throw_argument("sigma needs at least two nodes, got " + std::to_string(x.n));
  return sigma_estimate(PairwiseDistances(x), floor);
}

using NeighborSets = std::vector<std::vector<std::uint32_t>>;

/// k nearest other nodes per node, ordered by (squared distance, index).
inline NeighborSets knn_neighbors(const PairwiseDistances& dist, std::size_t k) {
  const std::size_t n = dist.size();
  if (k < 1 || k >= n)
    throw_argument("kNN needs 1 <= k < n (k=" + std::to_string(k) + ", n=" + std::to_string(n) + ")");
  NeighborSets out(n);
  std::vector<std::pair<double, std::uint32_t>> cand;
  cand.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) cand.emplace_back(dist.squared(i, j), static_cast<std::uint32_t>(j));
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    out[i].reserve(k);
    for (std::size_t t = 0; t < k; ++t) out[i].push_back(cand[t].second);
  }
  return out;
}

inline NeighborSets knn_neighbors(const NodeFeatures& x, std::size_t k) {
  if (k < 1 || k >= x.n)
    throw_argument("kNN needs 1 <= k < n (k=" + std::to_string(k) + ", n=" + std::to_string(x.n) + ")");
  return knn_neighbors(PairwiseDistances(x), k);
}

/// Gaussian affinities on the OR-symmetrized kNN edge set. Pairs whose weight
/// underflows to zero are dropped, keeping the no-stored-zeros invariant.
template <class SquaredDistanceFn>
SparseSymMatrix build_adjacency_with(std::size_t n, const NeighborSets& neighbors, double sigma,
                                     SquaredDistanceFn&& d2) {
  if (!(sigma > 0.0)) throw_argument("sigma must be positive");
  if (neighbors.size() != n) throw_shape("neighbor sets do not match node count");
  std::vector<std::vector<std::uint32_t>> adj(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::uint32_t j : neighbors[i]) {
      if (j == i || j >= n) throw_argument("invalid neighbor index");
      adj[i].push_back(j);
      adj[j].push_back(static_cast<std::uint32_t>(i));
    }
  }
  for (auto& row : adj) {
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
  }
  const double two_sigma2 = 2.0 * sigma * sigma;
  count_ops(Stage::Adjacency, 2);

  SparseSymMatrix w;
  w.n = n;
  w.row_ptr.assign(n + 1, 0);
  std::vector<std::vector<double>> vals(n);
  for (std::size_t i = 0; i < n; ++i) vals[i].assign(adj[i].size(), 0.0);
  std::uint64_t edges = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < adj[i].size(); ++t) {
      const std::size_t j = adj[i][t];
      if (j < i) continue;
      const double value = std::exp(-d2(i, j) / two_sigma2);
      ++edges;
      vals[i][t] = value;
      const auto& rj = adj[j];
      const auto pos = std::lower_bound(rj.begin(), rj.end(), static_cast<std::uint32_t>(i)) - rj.begin();
      vals[j][static_cast<std::size_t>(pos)] = value;
    }
  }
  count_ops(Stage::Adjacency, 2 * edges);  // divide + exp per undirected edge
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < adj[i].size(); ++t) {
      if (vals[i][t] == 0.0) continue;
      w.col_idx.push_back(adj[i][t]);
      w.values.push_back(vals[i][t]);
    }
    w.row_ptr[i + 1] = w.values.size();
  }
  return w;
}

inline SparseSymMatrix build_adjacency(const PairwiseDistances& dist, const NeighborSets& neighbors,
                                       double sigma) {
  return build_adjacency_with(dist.size(), neighbors, sigma,
                              [&](std::size_t i, std::size_t j) { return dist.squared(i, j); });
}

inline SparseSymMatrix build_adjacency(const NodeFeatures& x, const NeighborSets& neighbors, double sigma) {
  return build_adjacency_with(x.n, neighbors, sigma, [&](std::size_t i, std::size_t j) {
    count_ops(Stage::Adjacency, squared_distance_ops(x.dim));
    return squared_distance(x.row(i), x.row(j));
  });
}

/// L = I - D^{-1/2} W D^{-1/2}. Degrees are summed in sorted order; the
/// diagonal is exactly 1.
inline SparseSymMatrix normalized_laplacian(const SparseSymMatrix& w) {
  const std::size_t n = w.n;
  std::vector<double> degree(n);
  std::vector<double> scratch;
  std::uint64_t adds = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = w.row_values(i);
    scratch.assign(row.begin(), row.end());
    degree[i] = detail::ordered_sum(scratch);
    if (!(degree[i] > 0.0)) throw DegenerateGraphError(i, "isolated node in affinity graph");
    adds += row.size() - 1;
  }
  count_ops(Stage::Laplacian, adds);

  SparseSymMatrix l;
  l.n = n;
  l.row_ptr.assign(n + 1, 0);
  l.col_idx.reserve(w.nnz() + n);
  l.values.reserve(w.nnz() + n);
  for (std::size_t i = 0; i < n; ++i) {
    bool diag_done = false;
    for (std::size_t k = w.row_ptr[i]; k < w.row_ptr[i + 1]; ++k) {
      const std::size_t j = w.col_idx[k];
      if (!diag_done && j > i) {
        l.col_idx.push_back(static_cast<std::uint32_t>(i));
        l.values.push_back(1.0);
        diag_done = true;
      }
      const double v = -w.values[k] / std::sqrt(degree[i] * degree[j]);
      if (v != 0.0) {
        l.col_idx.push_back(static_cast<std::uint32_t>(j));
        l.values.push_back(v);
      }
    }
    if (!diag_done) {
      l.col_idx.push_back(static_cast<std::uint32_t>(i));
      l.values.push_back(1.0);
    }
    l.row_ptr[i + 1] = l.values.size();
  }
  count_ops(Stage::Laplacian, 3 * w.nnz());  // multiply, sqrt, divide per stored entry
  return l;
}

struct AffinityGraph {
  double sigma = 0.0;
  NeighborSets neighbors;
  SparseSymMatrix adjacency;
  SparseSymMatrix laplacian;
};

/// Distances are computed once and shared by sigma, kNN and the edge weights.
inline AffinityGraph build_graph(const NodeFeatures& x, const GraphConfig& cfg) {
  if (x.n < 2) throw_argument("graph construction needs at least two nodes, got " + std::to_string(x.n));
  const PairwiseDistances dist(x);
  AffinityGraph g;
  g.sigma = sigma_estimate(dist, cfg.sigma_floor);
  g.neighbors = knn_neighbors(dist, cfg.k);
  g.adjacency = build_adjacency(dist, g.neighbors, g.sigma);
  g.laplacian = normalized_laplacian(g.adjacency);
  return g;
}

/// Node indices sorted lexicographically by feature content (index breaks
/// exact duplicates). Depends only on the features, not on their labels.
inline std::vector<std::uint32_t> content_order(const NodeFeatures& x) {
  std::vector<std::uint32_t> order(x.n);
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    const auto ra = x.row(a);
    const auto rb = x.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });
  return order;
}

/// True when two nodes carry bit-identical feature vectors.
inline bool has_duplicate_features(const NodeFeatures& x) {
  const auto order = content_order(x);
  for (std::size_t t = 1; t < order.size(); ++t) {
    const auto a = x.row(order[t - 1]);
    const auto b = x.row(order[t]);
    if (std::equal(a.begin(), a.end(), b.begin())) return true;
  }
  return false;
}

}  // namespace svmamba
