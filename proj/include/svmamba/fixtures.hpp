#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <string>
#include <vector>

#include "error.hpp"
#include "patch_embed.hpp"
#include "sparse.hpp"
#include "spectral_graph.hpp"
#include "tensor_io.hpp"

namespace svmamba {

/// Unit-weight adjacency from an undirected edge list.
inline SparseSymMatrix unit_adjacency(std::size_t n, const std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges) {
  std::vector<Triplet> t;
  for (auto [a, b] : edges) {
    t.push_back({a, b, 1.0});
    t.push_back({b, a, 1.0});
  }
  return SparseSymMatrix::from_triplets(n, std::move(t));
}

inline SparseSymMatrix path_adjacency(std::size_t n) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> e;
  for (std::uint32_t i = 0; i + 1 < n; ++i) e.emplace_back(i, i + 1);
  return unit_adjacency(n, e);
}

inline SparseSymMatrix grid_adjacency(std::size_t rows, std::size_t cols) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> e;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const auto i = static_cast<std::uint32_t>(r * cols + c);
      if (c + 1 < cols) e.emplace_back(i, i + 1);
      if (r + 1 < rows) e.emplace_back(i, static_cast<std::uint32_t>(i + cols));
    }
  return unit_adjacency(rows * cols, e);
}

/// Two disjoint paths of lengths a and b.
inline SparseSymMatrix two_component_adjacency(std::size_t a, std::size_t b) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> e;
  for (std::uint32_t i = 0; i + 1 < a; ++i) e.emplace_back(i, i + 1);
  for (std::uint32_t i = 0; i + 1 < b; ++i) e.emplace_back(static_cast<std::uint32_t>(a + i), static_cast<std::uint32_t>(a + i + 1));
  return unit_adjacency(a + b, e);
}

/// Stem that averages each colour channel over the patch (C = in_channels).
inline StemWeights mean_stem(std::size_t patch, std::size_t channels = 3) {
  StemWeights w;
  w.patch = patch;
  w.in_channels = channels;
  w.out_channels = channels;
  w.projection.assign(w.patch_len() * channels, 0.0f);
  w.bias.assign(channels, 0.0f);
  const float scale = 1.0f / static_cast<float>(patch * patch);
  for (std::size_t k = 0; k < w.patch_len(); ++k) w.projection[k * channels + k % channels] = scale;
  return w;
}

/// kNN affinity graph over patch-mean features of a two-cluster image.
inline AffinityGraph two_cluster_graph(std::size_t hp, std::size_t wp, std::size_t k, std::uint64_t seed,
                                       double gap = 0.5, std::size_t patch = 4) {
  const auto img = synth_two_cluster(hp, wp, patch, gap, seed);
  GraphConfig cfg;
  cfg.k = k;
  return build_graph(flatten_features(patchify(img, mean_stem(patch))), cfg);
}

/// Diagonal matrix with entries 1 + i/(10 n): identity-like but with a simple
/// spectrum.
inline SparseSymMatrix near_identity(std::size_t n) {
  std::vector<Triplet> t;
  for (std::uint32_t i = 0; i < n; ++i) t.push_back({i, i, 1.0 + static_cast<double>(i) / (10.0 * static_cast<double>(n))});
  return SparseSymMatrix::from_triplets(n, std::move(t));
}

/// Named eigensolver fixtures: p3, path<N>, grid<R>x<C>, diag<N>,
/// two-component, two-cluster. Graph fixtures return normalized Laplacians.
inline SparseSymMatrix fixture_matrix(const std::string& name) {
  auto number = [&](const std::string& s) -> std::size_t {
    if (s.empty() || !std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); }))
      throw_argument("bad fixture size in '" + name + "'");
    return static_cast<std::size_t>(std::stoull(s));
  };
  if (name == "p3") return normalized_laplacian(path_adjacency(3));
  if (name == "two-component") return normalized_laplacian(two_component_adjacency(5, 5));
  if (name == "two-cluster") return two_cluster_graph(14, 14, 5, 7).laplacian;
  if (name.rfind("path", 0) == 0) {
    const auto n = number(name.substr(4));
    if (n < 2) throw_argument("path fixture needs at least 2 nodes");
    return normalized_laplacian(path_adjacency(n));
  }
  if (name.rfind("diag", 0) == 0) {
    const auto n = number(name.substr(4));
    if (n < 1) throw_argument("diag fixture needs at least 1 row");
    return near_identity(n);
  }
  if (name.rfind("grid", 0) == 0) {
    const auto x = name.find('x', 4);
    if (x == std::string::npos) throw_argument("grid fixture must look like grid<R>x<C>");
    const auto r = number(name.substr(4, x - 4));
    const auto c = number(name.substr(x + 1));
    if (r * c < 2) throw_argument("grid fixture needs at least 2 nodes");
    return normalized_laplacian(grid_adjacency(r, c));
  }
  throw_argument("unknown fixture '" + name + "'");
}

}  // namespace svmamba
