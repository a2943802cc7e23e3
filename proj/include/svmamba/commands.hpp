#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "dense_eig.hpp"
#include "eigensolver.hpp"
#include "error.hpp"
#include "fixtures.hpp"
#include "flops.hpp"
#include "invariance.hpp"
#include "model.hpp"
#include "report.hpp"
#include "tensor_io.hpp"
#include "traversal.hpp"

namespace svmamba {

/// Shared inputs of the CLI commands.
struct CommandOptions {
  ModelConfig cfg;
  std::string weights_path;  // empty: seeded generator
  bool parallel = false;
  std::uint64_t seed = 1;    // randomized checks
};

inline ModelWeights resolve_weights(const CommandOptions& o) {
  if (o.weights_path.empty()) return generate_weights(o.cfg);
  return load_weights(read_file_bytes(o.weights_path), o.cfg);
}

inline void echo_config(RunReport& rep, const CommandOptions& o) {
  rep.config_block(o.cfg.serialize());
  rep.config("weights", o.weights_path.empty() ? "generated" : o.weights_path);
}

/// Exit status for a finished report: 0 when every check passed, else 1.
inline int report_status(const RunReport& rep) { return rep.passed() ? 0 : 1; }

/// Exit status for an exception raised while running a command.
inline int error_status(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DegenerateGraph:
    case ErrorKind::DegenerateVector:
    case ErrorKind::Convergence:
    case ErrorKind::Numeric:
      return 3;
    default:
      return 2;
  }
}

namespace detail {

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

inline bool plan_is_consistent(const TraversalPlan& plan) {
  for (std::size_t t = 0; t < plan.orders.size(); ++t) {
    if (!is_permutation_of_iota(plan.orders[t])) return false;
    for (std::size_t s = 0; s < plan.n; ++s)
      if (plan.inverses[t][plan.orders[t][s]] != s) return false;
    if (t % 2 == 1 && !std::equal(plan.orders[t].begin(), plan.orders[t].end(), plan.orders[t - 1].rbegin()))
      return false;
  }
  return true;
}

}  // namespace detail

/// Builds the traversal for one image and writes `<prefix>_order<t>.ppm`
/// rank maps (one per direction), `<prefix>_plan.txt` and
/// `<prefix>_report.txt`.
inline RunReport cmd_traverse(const std::string& image_path, const CommandOptions& o, const std::string& out_prefix) {
  RunReport rep("traverse");
  echo_config(rep, o);
  const ImageTensor img = load_ppm(image_path);
  const ModelWeights w = resolve_weights(o);
  const FeatureMap f = rfn_aggregate(img, w.stem, o.cfg.turns, o.parallel);
  const StsResult sts = build_sts(f, StsConfig::from(o.cfg));

  rep.metric("tokens", static_cast<std::uint64_t>(sts.plan.n));
  rep.metric("grid_rows", static_cast<std::uint64_t>(f.hp));
  rep.metric("grid_cols", static_cast<std::uint64_t>(f.wp));
  rep.metric("sigma", sts.graph.sigma);
  rep.metric("adjacency_nnz", static_cast<std::uint64_t>(sts.graph.adjacency.nnz()));
  for (std::size_t j = 0; j < sts.basis.m; ++j) rep.metric("eigenvalue." + std::to_string(j), sts.basis.eigenvalues[j]);
  rep.metric("eig_dense_path", static_cast<std::uint64_t>(sts.eig.dense_path));
  rep.metric("eig_iterations", static_cast<std::uint64_t>(sts.eig.iterations));
  double worst = 0.0;
  for (double r : sts.eig.residuals) worst = std::max(worst, r);
  rep.metric("max_residual", worst);

  rep.check("plan_bijective", detail::plan_is_consistent(sts.plan));
  rep.check("residual_within_tol", worst <= o.cfg.eig_tol);
  for (const auto& c : degenerate_clusters(sts.basis.eigenvalues))
    rep.warn("eigenvalues " + std::to_string(c.first) + ".." + std::to_string(c.second - 1) +
             " are degenerate; their traversal orders are basis-dependent");

  const std::string dump = plan_dump(sts.plan);
  write_file_bytes(out_prefix + "_plan.txt", std::span(reinterpret_cast<const std::uint8_t*>(dump.data()), dump.size()));
  for (std::size_t t = 0; t < sts.plan.sequences(); ++t)
    save_ppm(out_prefix + "_order" + std::to_string(t) + ".ppm", rank_image(sts.plan, t, o.cfg.p));
  rep.metric("order_images", static_cast<std::uint64_t>(sts.plan.sequences()));
  const std::string text = rep.serialize();
  write_file_bytes(out_prefix + "_report.txt", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  return rep;
}

/// RFN equivariance, rotation content-order invariance, score agreement and
/// relabeling invariance. Inputs with duplicate features or clustered
/// eigenvalues get subspace-level checks instead, with a warning.
inline RunReport cmd_check_invariance(const std::string& image_path, const CommandOptions& o) {
  RunReport rep("check-invariance");
  echo_config(rep, o);
  rep.config("seed", std::to_string(o.seed));
  const ModelConfig& cfg = o.cfg;
  const ImageTensor img = load_ppm(image_path);
  check_network_input(img, cfg);
  const ModelWeights w = resolve_weights(o);
  const StsConfig sc = StsConfig::from(cfg);

  const FeatureMap f0 = rfn_aggregate(img, w.stem, cfg.turns, o.parallel);
  const StsResult s0 = build_sts(f0, sc);
  const std::size_t n = s0.plan.n;
  rep.metric("tokens", static_cast<std::uint64_t>(n));
  for (std::size_t j = 0; j < s0.basis.m; ++j) rep.metric("eigenvalue." + std::to_string(j), s0.basis.eigenvalues[j]);

  const ClosedSubspace ref = closed_leading_subspace(s0.graph.laplacian, cfg.m, cfg.eig_tol, sc.dense_threshold);
  const std::size_t sub_dim = ref.dim;
  const bool duplicates = has_duplicate_features(s0.nodes);
  const bool clustered = !degenerate_clusters(std::span(ref.basis.eigenvalues).first(sub_dim)).empty() || sub_dim > cfg.m;
  const bool degenerate = duplicates || clustered;
  rep.metric("degenerate", static_cast<std::uint64_t>(degenerate));

  // (a) RFN equivariance
  std::vector<FeatureMap> rotated_features;
  std::size_t rfn_mismatch = 0;
  for (int q = 1; q <= 3; ++q) {
    const ImageTensor rimg = rotate_quarter(img, QuarterTurn(q));
    rotated_features.push_back(rfn_aggregate(rimg, w.stem, cfg.turns, o.parallel));
    const FeatureMap expect = rotate_feature_map(f0, QuarterTurn(q));
    std::size_t bad = 0;
    for (std::size_t i = 0; i < expect.data.size(); ++i)
      if (expect.data[i] != rotated_features.back().data[i]) ++bad;
    rep.metric("rfn_mismatch.q" + std::to_string(q), static_cast<std::uint64_t>(bad));
    rfn_mismatch += bad;
  }
  rep.check("rfn_equivariance", rfn_mismatch == 0);

  XorShift64Star rng(o.seed);
  constexpr std::size_t kRelabelings = 32;
  constexpr double kSpectrumTol = 1e-10;
  constexpr double kAngleTol = 1e-6;

  if (!degenerate) {
    // (b) content order under rotation, (c) scores
    std::size_t content_bad = 0;
    double spec_gap = 0.0;
    for (int q = 1; q <= 3; ++q) {
      const StsResult sq = build_sts(rotated_features[q - 1], sc);
      const std::size_t bad = content_order_mismatches(s0.nodes, s0.plan, sq.nodes, sq.plan);
      rep.metric("content_mismatch.q" + std::to_string(q), static_cast<std::uint64_t>(bad));
      content_bad += bad;
      spec_gap = std::max(spec_gap, detail::max_abs_diff(s0.basis.eigenvalues, sq.basis.eigenvalues));
    }
    rep.metric("spectrum_gap_rotation", spec_gap);
    rep.check("content_order_rotation", content_bad == 0);
    rep.check("spectrum_rotation", spec_gap <= kSpectrumTol);

    const auto scores0 = network_forward(img, w, cfg, {o.parallel});
    double score_gap = 0.0;
    for (int q = 1; q <= 3; ++q) {
      const auto sq = network_forward(rotate_quarter(img, QuarterTurn(q)), w, cfg, {o.parallel});
      score_gap = std::max(score_gap, detail::max_abs_diff(scores0, sq));
    }
    rep.metric("score_gap", score_gap);
    rep.check("score_agreement", score_gap <= 1e-6);

    // (d) relabelings of the node set
    std::size_t perm_bad = 0;
    double perm_gap = 0.0;
    for (std::size_t r = 0; r < kRelabelings; ++r) {
      const Permutation perm = random_permutation(n, rng);
      const NodeFeatures xp = permute_nodes(s0.nodes, perm);
      GraphConfig g;
      g.k = cfg.k;
      g.sigma_floor = cfg.sigma_floor;
      const AffinityGraph gp = build_graph(xp, g);
      EigConfig e;
      e.m = cfg.m;
      e.tol = cfg.eig_tol;
      e.dense_threshold = sc.dense_threshold;
      const SpectralBasis bp = canonicalize_signs(lanczos_smallest(gp.laplacian, e), e.eps_sign, content_order(xp));
      const TraversalPlan pp = build_plan(bp, {n, 1});
      perm_bad += content_order_mismatches(s0.nodes, s0.plan, xp, pp);
      perm_gap = std::max(perm_gap, detail::max_abs_diff(s0.basis.eigenvalues, bp.eigenvalues));
    }
    rep.metric("relabelings", static_cast<std::uint64_t>(kRelabelings));
    rep.metric("content_mismatch_relabel", static_cast<std::uint64_t>(perm_bad));
    rep.metric("spectrum_gap_relabel", perm_gap);
    rep.check("content_order_permutation", perm_bad == 0);
    rep.check("spectrum_permutation", perm_gap <= kSpectrumTol);
    return rep;
  }

  rep.warn(std::string(duplicates ? "duplicate token features" : "clustered eigenvalues") +
           ": traversal order is basis-dependent; checks demoted to subspace level (dimension " +
           std::to_string(sub_dim) + ")");
  rep.metric("subspace_dim", static_cast<std::uint64_t>(sub_dim));
  rep.metric("subspace_gap", ref.gap);
  // The reference subspace holds complete eigenvalue clusters, so its image
  // under an exact symmetry is again an invariant subspace; the residual over
  // the spectral gap bounds the angle without re-solving the cluster.
  EigConfig spectrum_cfg;
  spectrum_cfg.m = std::min(n, cfg.m + 4);
  spectrum_cfg.tol = cfg.eig_tol;
  spectrum_cfg.dense_threshold = sc.dense_threshold;
  const auto ref_values = std::span(ref.basis.eigenvalues);

  double rot_sine = 0.0, rot_gap = 0.0;
  for (int q = 1; q <= 3; ++q) {
    GraphConfig g;
    g.k = cfg.k;
    g.sigma_floor = cfg.sigma_floor;
    const AffinityGraph gq = build_graph(flatten_features(rotated_features[q - 1]), g);
    const auto mapped = gather_vectors(ref.basis, rotation_source_map(f0.hp, f0.wp, QuarterTurn(q)), sub_dim);
    rot_sine = std::max(rot_sine, invariant_subspace_sine_bound(gq.laplacian, mapped, ref_values, sub_dim, ref.gap));
    const SpectralBasis bq = lanczos_smallest(gq.laplacian, spectrum_cfg);
    rot_gap = std::max(rot_gap, detail::max_abs_diff(ref_values.first(spectrum_cfg.m), bq.eigenvalues));
  }
  rep.metric("subspace_sine_bound_rotation", rot_sine);
  rep.metric("spectrum_gap_rotation", rot_gap);
  rep.check("subspace_rotation", rot_sine <= std::sin(kAngleTol));
  rep.check("spectrum_rotation", rot_gap <= kSpectrumTol);

  double perm_sine = 0.0, perm_gap = 0.0;
  for (std::size_t r = 0; r < kRelabelings; ++r) {
    const Permutation perm = random_permutation(n, rng);
    const SparseSymMatrix lp = permute_matrix(s0.graph.laplacian, perm);
    const auto mapped = gather_vectors(ref.basis, perm, sub_dim);
    perm_sine = std::max(perm_sine, invariant_subspace_sine_bound(lp, mapped, ref_values, sub_dim, ref.gap));
    const SpectralBasis bp = lanczos_smallest(lp, spectrum_cfg);
    perm_gap = std::max(perm_gap, detail::max_abs_diff(ref_values.first(spectrum_cfg.m), bp.eigenvalues));
  }
  rep.metric("relabelings", static_cast<std::uint64_t>(kRelabelings));
  rep.metric("subspace_sine_bound_relabel", perm_sine);
  rep.metric("spectrum_gap_relabel", perm_gap);
  rep.check("subspace_permutation", perm_sine <= std::sin(kAngleTol));
  rep.check("spectrum_permutation", perm_gap <= kSpectrumTol);
  return rep;
}

struct EigCommandOptions {
  std::size_t m = 4;
  bool adjacency = false;         // triplet file holds W; convert to L first
  std::size_t dense_limit = 1000;  // skip the Jacobi comparison above this size
};

/// Lanczos (forced, no dense fallback) against the Jacobi oracle on a triplet
/// file or a named fixture.
inline RunReport cmd_eig(const std::string& source, const EigCommandOptions& o) {
  RunReport rep("eig");
  rep.config("source", source);
  rep.config("m", std::to_string(o.m));
  rep.config("adjacency", o.adjacency ? "1" : "0");
  SparseSymMatrix l;
  if (std::filesystem::exists(source)) {
    const auto bytes = read_file_bytes(source);
    l = parse_triplet_text(std::string(bytes.begin(), bytes.end()));
    if (o.adjacency) l = normalized_laplacian(l);
  } else {
    l = fixture_matrix(source);
  }
  rep.metric("n", static_cast<std::uint64_t>(l.n));
  rep.metric("nnz", static_cast<std::uint64_t>(l.nnz()));

  EigConfig e;
  e.m = o.m;
  e.dense_threshold = 0;
  EigReport er;
  reset_flops();
  const SpectralBasis basis = lanczos_smallest(l, e, &er);
  double max_res = 0.0;
  for (std::size_t j = 0; j < basis.m; ++j) {
    rep.metric("eigenvalue." + std::to_string(j), basis.eigenvalues[j]);
    rep.metric("residual." + std::to_string(j), er.residuals[j]);
    max_res = std::max(max_res, er.residuals[j]);
  }
  rep.metric("iterations", static_cast<std::uint64_t>(er.iterations));
  rep.metric("phases", static_cast<std::uint64_t>(er.phases));
  rep.metric("flops", er.flops);
  rep.metric("orthogonality_error", er.max_orthogonality_error);
  rep.metric("max_residual", max_res);
  rep.check("residual", max_res <= e.tol);
  rep.check("orthogonality", er.max_orthogonality_error <= 1e-8);

  if (l.n <= o.dense_limit) {
    const auto dense = dense_eig_oracle(l.to_dense());
    double max_gap = 0.0, worst_cos = 1.0;
    for (std::size_t j = 0; j < basis.m; ++j) {
      const double gap = std::abs(basis.eigenvalues[j] - dense.values[j]);
      rep.metric("gap." + std::to_string(j), gap);
      max_gap = std::max(max_gap, gap);
      const bool isolated = (j == 0 || dense.values[j] - dense.values[j - 1] >= 1e-9) &&
                            (j + 1 == l.n || dense.values[j + 1] - dense.values[j] >= 1e-9);
      if (isolated) worst_cos = std::min(worst_cos, std::abs(detail::dot(basis.vector(j), dense.vector(j))));
    }
    rep.metric("max_gap", max_gap);
    rep.metric("min_alignment", worst_cos);
    rep.check("eigenvalue_gap", max_gap <= e.tol);
    rep.check("eigenvector_alignment", worst_cos >= 1.0 - 1e-8);
  } else {
    rep.warn("dense oracle skipped for n=" + std::to_string(l.n));
  }

  std::size_t zeros = 0;
  for (double v : basis.eigenvalues)
    if (std::abs(v) < 1e-10) ++zeros;
  rep.metric("near_zero_eigenvalues", static_cast<std::uint64_t>(zeros));
  if (zeros > 1)
    rep.warn("multiplicity " + std::to_string(zeros) + " at eigenvalue 0: graph has at least " +
             std::to_string(zeros) + " connected components");
  for (const auto& c : degenerate_clusters(basis.eigenvalues))
    if (std::abs(basis.eigenvalues[c.first]) >= 1e-10)
      rep.warn("multiplicity " + std::to_string(c.second - c.first) + " at eigenvalue " +
               format_double(basis.eigenvalues[c.first]));
  return rep;
}

/// STS cost sweep over 7x7, 14x14, 28x28 and 56x56 token grids.
inline RunReport cmd_bench(const CommandOptions& o) {
  RunReport rep("bench");
  echo_config(rep, o);
  const ModelConfig& cfg = o.cfg;
  const ModelWeights w = resolve_weights(o);
  const StsConfig sc = StsConfig::from(cfg);
  const std::size_t sides[] = {7, 14, 28, 56};
  std::vector<double> bytes;
  bool nnz_ok = true;
  bool budget_ok = true;
  for (std::size_t side : sides) {
    const std::size_t n = side * side;
    const ImageTensor img = synth_scene(side * cfg.p, side * cfg.p, cfg.image_seed);
    const FeatureMap f = rfn_aggregate(img, w.stem, cfg.turns, o.parallel);
    reset_flops();
    const auto t0 = std::chrono::steady_clock::now();
    const StsResult sts = build_sts(f, sc);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const std::string pre = "n" + std::to_string(n) + ".";
    std::uint64_t total = 0;
    for (Stage s : {Stage::Adjacency, Stage::Laplacian, Stage::Eigensolver}) {
      rep.metric(pre + "flops." + std::string(stage_name(s)), count_flops(s));
      total += count_flops(s);
    }
    rep.metric(pre + "flops.sts", total);
    const auto nnz = sts.graph.adjacency.nnz();
    const double mem = static_cast<double>(sts.graph.adjacency.storage_bytes() + sts.graph.laplacian.storage_bytes());
    bytes.push_back(mem);
    rep.metric(pre + "adjacency_nnz", static_cast<std::uint64_t>(nnz));
    rep.metric(pre + "laplacian_nnz", static_cast<std::uint64_t>(sts.graph.laplacian.nnz()));
    rep.metric(pre + "sparse_bytes", static_cast<std::uint64_t>(mem));
    rep.metric(pre + "eig_iterations", static_cast<std::uint64_t>(sts.eig.iterations));
    rep.metric(pre + "eig_dense_path", static_cast<std::uint64_t>(sts.eig.dense_path));
    rep.timing(pre + "sts_seconds", secs);
    if (nnz > 2 * cfg.k * n) nnz_ok = false;
    if (n == 196 && total >= 10'000'000) budget_ok = false;
  }
  bool linear = true;
  for (std::size_t i = 1; i < bytes.size(); ++i) {
    const double ratio = bytes[i] / bytes[i - 1];
    rep.metric("memory_ratio." + std::to_string(i), ratio);
    if (ratio < 3.0 || ratio > 5.0) linear = false;
  }
  rep.check("nnz_bound", nnz_ok);
  rep.check("memory_near_linear", linear);
  rep.check("sts_flops_budget", budget_ok);
  return rep;
}

}  // namespace svmamba
