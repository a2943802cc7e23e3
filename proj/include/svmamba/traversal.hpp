#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "eigensolver.hpp"
#include "error.hpp"
#include "patch_embed.hpp"
#include "rng.hpp"

namespace svmamba {

using Permutation = std::vector<std::uint32_t>;

struct GridShape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const GridShape&) const = default;
};

/// 2m token orders: order 2j ascends by eigenvector j, order 2j+1 is its exact
/// reverse. `inverses[t][orders[t][s]] == s`.
struct TraversalPlan {
  std::size_t n = 0;
  std::size_t m = 0;
  std::vector<Permutation> orders;
  std::vector<Permutation> inverses;
  GridShape source_shape;

  std::size_t sequences() const { return orders.size(); }
  bool operator==(const TraversalPlan&) const = default;
};

inline Permutation invert_permutation(std::span<const std::uint32_t> p) {
  Permutation inv(p.size());
  for (std::size_t s = 0; s < p.size(); ++s) inv[p[s]] = static_cast<std::uint32_t>(s);
  return inv;
}

inline bool is_permutation_of_iota(std::span<const std::uint32_t> p) {
  std::vector<bool> seen(p.size(), false);
  for (auto v : p) {
    if (v >= p.size() || seen[v]) return false;
    seen[v] = true;
  }
  return true;
}

/// Assembles a plan from ascending orders, appending the reversed copies.
inline TraversalPlan plan_from_ascending(std::vector<Permutation> ascending, GridShape shape) {
  TraversalPlan plan;
  plan.n = shape.size();
  plan.m = ascending.size();
  plan.source_shape = shape;
  for (auto& asc : ascending) {
    if (asc.size() != plan.n || !is_permutation_of_iota(asc)) throw_argument("order is not a permutation");
    Permutation desc(asc.rbegin(), asc.rend());
    plan.orders.push_back(std::move(asc));
    plan.orders.push_back(std::move(desc));
  }
  for (const auto& o : plan.orders) plan.inverses.push_back(invert_permutation(o));
  return plan;
}

/// Ascending order of eigenvector j; ties fall through to eigenvectors j+1,
/// j+2, ... and finally to node index. The sort is stable, so the plan is
/// bit-deterministic.
inline TraversalPlan build_plan(const SpectralBasis& basis, GridShape shape) {
  if (basis.n != shape.size())
    throw_argument("basis has " + std::to_string(basis.n) + " nodes but grid holds " +
                   std::to_string(shape.size()));
  std::vector<Permutation> ascending;
  ascending.reserve(basis.m);
  for (std::size_t j = 0; j < basis.m; ++j) {
    Permutation order(basis.n);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
      for (std::size_t t = j; t < basis.m; ++t) {
        const auto u = basis.vector(t);
        if (u[a] < u[b]) return true;
        if (u[b] < u[a]) return false;
      }
      return false;
    });
    ascending.push_back(std::move(order));
  }
  return plan_from_ascending(std::move(ascending), shape);
}

/// Row-major raster traversal (and its reverse) repeated for m directions.
inline TraversalPlan raster_plan(GridShape shape, std::size_t m = 1) {
  Permutation id(shape.size());
  std::iota(id.begin(), id.end(), 0u);
  return plan_from_ascending(std::vector<Permutation>(m, id), shape);
}

/// Seeded uniformly random traversal (Fisher-Yates on the xorshift stream).
inline TraversalPlan random_plan(GridShape shape, std::uint64_t seed, std::size_t m = 1) {
  XorShift64Star rng(seed);
  std::vector<Permutation> asc;
  for (std::size_t j = 0; j < m; ++j) {
    Permutation p(shape.size());
    std::iota(p.begin(), p.end(), 0u);
    for (std::size_t i = p.size(); i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
    asc.push_back(std::move(p));
  }
  return plan_from_ascending(std::move(asc), shape);
}

/// L tokens of C channels, row-major.
struct TokenSequence {
  std::size_t length = 0;
  std::size_t channels = 0;
  std::vector<double> data;

  TokenSequence() = default;
  TokenSequence(std::size_t l, std::size_t c) : length(l), channels(c), data(l * c, 0.0) {}

  std::span<double> token(std::size_t s) { return {data.data() + s * channels, channels}; }
  std::span<const double> token(std::size_t s) const { return {data.data() + s * channels, channels}; }

  bool operator==(const TokenSequence&) const = default;
};

/// Gathers the feature map into one sequence per plan order (copies).
inline std::vector<TokenSequence> apply_scan(const FeatureMap& f, const TraversalPlan& plan) {
  if (f.tokens() != plan.n)
    throw_shape("feature map has " + std::to_string(f.tokens()) + " tokens, plan expects " +
                std::to_string(plan.n));
  std::vector<TokenSequence> seqs;
  seqs.reserve(plan.sequences());
  for (const auto& order : plan.orders) {
    TokenSequence s(plan.n, f.channels);
    for (std::size_t pos = 0; pos < plan.n; ++pos) {
      const auto src = f.token(order[pos]);
      std::copy(src.begin(), src.end(), s.token(pos).begin());
    }
    seqs.push_back(std::move(s));
  }
  return seqs;
}

enum class MergeMode {
  ConcatProjection,  // concatenate the 2m copies, project 2mC -> C
  Sum,               // add the copies
  Mean,              // average the copies
  Select,            // keep a single sequence
};

/// Channel merge for the scattered sequences. `projection` is (2m*C) x C,
/// row-major, with the input index t*C + c.
struct MergeWeights {
  MergeMode mode = MergeMode::Mean;
  std::size_t select = 0;
  std::vector<float> projection;
  std::vector<float> bias;

  static MergeWeights mean() { return {}; }
  static MergeWeights sum() { return {MergeMode::Sum, 0, {}, {}}; }
  static MergeWeights selector(std::size_t t) { return {MergeMode::Select, t, {}, {}}; }
};

/// Scatters each sequence back through its inverse permutation and merges the
/// 2m copies of every token. Mean is evaluated as first copy plus the averaged
/// deviations, so identical copies round-trip bit-exactly.
inline FeatureMap merge_scan(std::span<const TokenSequence> seqs, const TraversalPlan& plan,
                             const MergeWeights& mix) {
  const std::size_t T = plan.sequences();
  if (seqs.size() != T) throw_shape("merge expects " + std::to_string(T) + " sequences");
  const std::size_t C = seqs.empty() ? 0 : seqs[0].channels;
  for (const auto& s : seqs)
    if (s.length != plan.n || s.channels != C) throw_shape("sequence shape mismatch in merge");
  if (mix.mode == MergeMode::ConcatProjection &&
      (mix.projection.size() != T * C * C || mix.bias.size() != C))
    throw_shape("merge projection must be (2m*C) x C with a C-vector bias");
  if (mix.mode == MergeMode::Select && mix.select >= T) throw_argument("merge selector out of range");

  FeatureMap out(plan.source_shape.rows, plan.source_shape.cols, C);
  std::vector<double> acc(C);
  for (std::size_t i = 0; i < plan.n; ++i) {
    auto dst = out.token(i);
    switch (mix.mode) {
      case MergeMode::Select: {
        const auto src = seqs[mix.select].token(plan.inverses[mix.select][i]);
        std::copy(src.begin(), src.end(), dst.begin());
        break;
      }
      case MergeMode::Sum: {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t t = 0; t < T; ++t) {
          const auto src = seqs[t].token(plan.inverses[t][i]);
          for (std::size_t c = 0; c < C; ++c) acc[c] += src[c];
        }
        std::copy(acc.begin(), acc.end(), dst.begin());
        break;
      }
      case MergeMode::Mean: {
        const auto first = seqs[0].token(plan.inverses[0][i]);
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t t = 1; t < T; ++t) {
          const auto src = seqs[t].token(plan.inverses[t][i]);
          for (std::size_t c = 0; c < C; ++c) acc[c] += src[c] - first[c];
        }
        for (std::size_t c = 0; c < C; ++c) dst[c] = first[c] + acc[c] / static_cast<double>(T);
        break;
      }
      case MergeMode::ConcatProjection: {
        for (std::size_t c = 0; c < C; ++c) acc[c] = mix.bias[c];
        for (std::size_t t = 0; t < T; ++t) {
          const auto src = seqs[t].token(plan.inverses[t][i]);
          for (std::size_t c = 0; c < C; ++c) {
            const float* row = mix.projection.data() + (t * C + c) * C;
            const double x = src[c];
            for (std::size_t o = 0; o < C; ++o) acc[o] += x * static_cast<double>(row[o]);
          }
        }
        std::copy(acc.begin(), acc.end(), dst.begin());
        break;
      }
    }
  }
  return out;
}

/// Selected input cell (flat index into the source grid) per pooled cell.
struct PoolIndexMap {
  GridShape in_shape;
  GridShape out_shape;
  std::vector<std::uint32_t> argmax;
};

/// 2x2 max pooling by token L2 norm; the winning token is copied whole. Ties
/// keep the earliest row-major cell of the window.
inline std::pair<FeatureMap, PoolIndexMap> pool_indices(const FeatureMap& f) {
  if (f.hp % 2 != 0 || f.wp % 2 != 0)
    throw_shape("2x2 pooling needs even grid dimensions, got " + std::to_string(f.hp) + "x" +
                std::to_string(f.wp));
  PoolIndexMap map;
  map.in_shape = {f.hp, f.wp};
  map.out_shape = {f.hp / 2, f.wp / 2};
  FeatureMap out(map.out_shape.rows, map.out_shape.cols, f.channels);
  auto norm2 = [&](std::size_t idx) {
    double acc = 0.0;
    for (double v : f.token(idx)) acc += v * v;
    return acc;
  };
  for (std::size_t r = 0; r < map.out_shape.rows; ++r) {
    for (std::size_t c = 0; c < map.out_shape.cols; ++c) {
      std::size_t best = (2 * r) * f.wp + 2 * c;
      double best_norm = norm2(best);
      const std::size_t window[3] = {(2 * r) * f.wp + 2 * c + 1, (2 * r + 1) * f.wp + 2 * c,
                                     (2 * r + 1) * f.wp + 2 * c + 1};
      for (std::size_t idx : window) {
        const double nv = norm2(idx);
        if (nv > best_norm) {
          best_norm = nv;
          best = idx;
        }
      }
      map.argmax.push_back(static_cast<std::uint32_t>(best));
      const auto src = f.token(best);
      std::copy(src.begin(), src.end(), out.token(r * map.out_shape.cols + c).begin());
    }
  }
  return {std::move(out), std::move(map)};
}

/// Carries the traversal to the pooled grid: each pooled cell inherits the
/// eigenvector values of the cell it was pooled from, and the plan is rebuilt
/// from those gathered values. Eigenvalues are kept as metadata; the gathered
/// vectors are not renormalized.
inline std::pair<TraversalPlan, SpectralBasis> downsample_plan(const TraversalPlan& plan,
                                                               const SpectralBasis& basis,
                                                               const PoolIndexMap& pool) {
  if (!(pool.in_shape == plan.source_shape) || pool.out_shape.rows * 2 != plan.source_shape.rows ||
      pool.out_shape.cols * 2 != plan.source_shape.cols)
    throw_shape("pool map does not halve the plan's grid");
  if (basis.n != plan.n) throw_shape("basis and plan disagree on node count");
  SpectralBasis out;
  out.n = pool.out_shape.size();
  out.m = basis.m;
  out.eigenvalues = basis.eigenvalues;
  out.vectors.resize(out.n * out.m);
  for (std::size_t j = 0; j < basis.m; ++j) {
    const auto u = basis.vector(j);
    auto v = out.vector(j);
    for (std::size_t cell = 0; cell < out.n; ++cell) v[cell] = u[pool.argmax[cell]];
  }
  TraversalPlan next = build_plan(out, pool.out_shape);
  return {std::move(next), std::move(out)};
}

/// Number of adjacent pairs in `order` whose labels differ.
inline std::size_t boundary_crossings(std::span<const std::uint32_t> order, std::span<const int> labels) {
  std::size_t crossings = 0;
  for (std::size_t s = 1; s < order.size(); ++s)
    if (labels[order[s]] != labels[order[s - 1]]) ++crossings;
  return crossings;
}

/// Text dump, one line per order: "order <t> <asc|desc>: i0 i1 ...".
inline std::string plan_dump(const TraversalPlan& plan) {
  std::string out;
  for (std::size_t t = 0; t < plan.orders.size(); ++t) {
    out += "order " + std::to_string(t) + (t % 2 == 0 ? " asc:" : " desc:");
    for (auto idx : plan.orders[t]) out += " " + std::to_string(idx);
    out += "\n";
  }
  return out;
}

/// Rank map of one order as a grey image upscaled by `scale`: the token
/// visited at position s gets intensity s / n.
inline ImageTensor rank_image(const TraversalPlan& plan, std::size_t t, std::size_t scale = 1) {
  const auto& inv = plan.inverses.at(t);
  const GridShape g = plan.source_shape;
  ImageTensor img(g.rows * scale, g.cols * scale, 3);
  for (std::size_t i = 0; i < img.height; ++i) {
    for (std::size_t j = 0; j < img.width; ++j) {
      const std::size_t node = (i / scale) * g.cols + (j / scale);
      const float v = static_cast<float>(inv[node]) / static_cast<float>(plan.n);
      for (std::size_t c = 0; c < 3; ++c) img.at(i, j, c) = v;
    }
  }
  return img;
}

}  // namespace svmamba
