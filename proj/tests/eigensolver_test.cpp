#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "svmamba/dense_eig.hpp"
#include "svmamba/eigensolver.hpp"
#include "svmamba/fixtures.hpp"
#include "svmamba/invariance.hpp"

using namespace svmamba;

namespace {

EigConfig lanczos_only(std::size_t m) {
  EigConfig cfg;
  cfg.m = m;
  cfg.dense_threshold = 0;
  return cfg;
}

double abs_dot(std::span<const double> a, std::span<const double> b) { return std::abs(detail::dot(a, b)); }

void expect_matches_oracle(const SparseSymMatrix& l, std::size_t m, const std::string& label) {
  const auto oracle = dense_eig_oracle(l.to_dense());
  EigReport rep;
  const auto basis = lanczos_smallest(l, lanczos_only(m), &rep);
  EXPECT_FALSE(rep.dense_path) << label;
  for (std::size_t j = 0; j < m; ++j) {
    EXPECT_NEAR(basis.eigenvalues[j], oracle.values[j], 1e-8) << label << " j=" << j;
    EXPECT_LE(rep.residuals[j], 1e-8) << label;
    const bool isolated = (j == 0 || oracle.values[j] - oracle.values[j - 1] > 1e-6) &&
                          (j + 1 >= l.n || oracle.values[j + 1] - oracle.values[j] > 1e-6);
    if (isolated) {
      EXPECT_GE(abs_dot(basis.vector(j), oracle.vector(j)), 1.0 - 1e-8) << label << " j=" << j;
    }
  }
  EXPECT_LE(rep.max_orthogonality_error, 1e-8) << label;
}

}  // namespace

TEST(DenseOracle, TwoNodeLaplacian) {
  DenseMatrix a(2);
  a(0, 0) = a(1, 1) = 1.0;
  a(0, 1) = a(1, 0) = -1.0;
  const auto r = dense_eig_oracle(a);
  EXPECT_NEAR(r.values[0], 0.0, 1e-15);
  EXPECT_NEAR(r.values[1], 2.0, 1e-15);
  EXPECT_NEAR(std::abs(r.vector(0)[0]), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(r.vector(0)[0] * r.vector(0)[1], 0.5, 1e-15);
  EXPECT_NEAR(r.vector(1)[0] * r.vector(1)[1], -0.5, 1e-15);
}

TEST(DenseOracle, ReconstructsRandomSymmetric) {
  XorShift64Star rng(4);
  DenseMatrix a(9);
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t j = i; j < 9; ++j) a(i, j) = a(j, i) = rng.uniform(-1, 1);
  const auto r = dense_eig_oracle(a);
  for (std::size_t j = 1; j < 9; ++j) EXPECT_LE(r.values[j - 1], r.values[j]);
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t j = 0; j < 9; ++j) {
      double rec = 0.0, gram = 0.0;
      for (std::size_t t = 0; t < 9; ++t) {
        rec += r.vector(t)[i] * r.values[t] * r.vector(t)[j];
        gram += r.vector(i)[t] * r.vector(j)[t];
      }
      EXPECT_NEAR(rec, a(i, j), 1e-10);
      EXPECT_NEAR(gram, i == j ? 1.0 : 0.0, 1e-10);
    }
}

TEST(DenseOracle, RejectsAsymmetric) {
  DenseMatrix a(2);
  a(0, 1) = 1.0;
  EXPECT_THROW(dense_eig_oracle(a), Error);
}

TEST(Lanczos, PathOfThreeSpectrum) {
  const auto basis = lanczos_smallest(fixture_matrix("p3"), lanczos_only(3));
  EXPECT_NEAR(basis.eigenvalues[0], 0.0, 1e-10);
  EXPECT_NEAR(basis.eigenvalues[1], 1.0, 1e-10);
  EXPECT_NEAR(basis.eigenvalues[2], 2.0, 1e-10);
  // null vector is proportional to sqrt(degree) = (1, sqrt2, 1)
  const auto u = basis.vector(0);
  EXPECT_NEAR(u[1] / u[0], std::sqrt(2.0), 1e-8);
  EXPECT_NEAR(u[2] / u[0], 1.0, 1e-8);
}

TEST(Lanczos, GridHasZeroSmallestEigenvalue) {
  EigReport rep;
  EigConfig cfg;
  cfg.m = 1;
  const auto basis = lanczos_smallest(fixture_matrix("grid14x14"), cfg, &rep);
  EXPECT_FALSE(rep.dense_path);
  EXPECT_LE(std::abs(basis.eigenvalues[0]), 1e-10);
}

TEST(Lanczos, MatchesDenseOracleOnFixtures) {
  for (const char* name : {"p3", "path10", "path57", "grid3x4", "grid14x14", "grid20x20", "diag20", "two-component",
                           "two-cluster", "path400"}) {
    const auto l = fixture_matrix(name);
    expect_matches_oracle(l, std::min<std::size_t>(4, l.n), name);
  }
}

TEST(Lanczos, RandomKnnGraphs) {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const auto g = two_cluster_graph(6 + seed, 8, 3 + seed, seed, 0.2 + 0.1 * static_cast<double>(seed));
    expect_matches_oracle(g.laplacian, 4, "two-cluster seed " + std::to_string(seed));
  }
}

TEST(Lanczos, FullSpectrumWhenMEqualsN) {
  const auto l = fixture_matrix("path6");
  const auto oracle = dense_eig_oracle(l.to_dense());
  const auto basis = lanczos_smallest(l, lanczos_only(6));
  for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(basis.eigenvalues[j], oracle.values[j], 1e-10);
  EXPECT_LE(max_orthogonality_error(basis), 1e-8);
}

TEST(Lanczos, SmallMatricesUseDensePath) {
  EigReport rep;
  lanczos_smallest(fixture_matrix("path10"), EigConfig{}, &rep);
  EXPECT_TRUE(rep.dense_path);
}

TEST(Lanczos, EigenvaluesWithinLaplacianRange) {
  const auto basis = lanczos_smallest(fixture_matrix("two-cluster"), lanczos_only(4));
  for (double v : basis.eigenvalues) {
    EXPECT_GE(v, -1e-10);
    EXPECT_LE(v, 2.0 + 1e-10);
  }
  for (std::size_t j = 0; j < 4; ++j) {
    double norm = 0.0;
    for (double x : basis.vector(j)) norm += x * x;
    EXPECT_NEAR(std::sqrt(norm), 1.0, 1e-10);
  }
}

TEST(Lanczos, DeterministicAcrossCalls) {
  const auto l = fixture_matrix("grid14x14");
  EXPECT_EQ(lanczos_smallest(l, lanczos_only(4)), lanczos_smallest(l, lanczos_only(4)));
}

TEST(Lanczos, SpectrumInvariantUnderRelabeling) {
  const auto l = fixture_matrix("two-cluster");
  const auto base = lanczos_smallest(l, lanczos_only(4));
  XorShift64Star rng(17);
  for (int r = 0; r < 5; ++r) {
    const auto pl = permute_matrix(l, random_permutation(l.n, rng));
    const auto other = lanczos_smallest(pl, lanczos_only(4));
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(other.eigenvalues[j], base.eigenvalues[j], 1e-10);
  }
}

TEST(Lanczos, ArgumentAndConvergenceErrors) {
  const auto l = fixture_matrix("grid14x14");
  EXPECT_THROW(lanczos_smallest(l, lanczos_only(0)), Error);
  EXPECT_THROW(lanczos_smallest(l, lanczos_only(197)), Error);
  auto bad_tol = lanczos_only(2);
  bad_tol.tol = 0.0;
  EXPECT_THROW(lanczos_smallest(l, bad_tol), Error);
  auto starved = lanczos_only(4);
  starved.max_iter = 2;
  try {
    lanczos_smallest(l, starved);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Convergence);
  }
}

TEST(SignCanonicalization, SpecExamples) {
  SpectralBasis b{3, 1, {0.0}, {-0.5, 0.2, 0.1}};
  EXPECT_EQ(canonicalize_signs(b, 1e-12).vectors, (std::vector<double>{0.5, -0.2, -0.1}));
  SpectralBasis tiny{3, 1, {0.0}, {1e-15, -0.3, 0.4}};
  EXPECT_EQ(canonicalize_signs(tiny, 1e-12).vectors, (std::vector<double>{-1e-15, 0.3, -0.4}));
  SpectralBasis zero{2, 1, {0.0}, {0.0, 1e-14}};
  try {
    canonicalize_signs(zero, 1e-12);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateVector);
  }
}

TEST(SignCanonicalization, FollowsReferenceOrder) {
  SpectralBasis b{3, 1, {0.0}, {0.5, 0.2, -0.1}};
  const std::vector<std::uint32_t> order{2, 0, 1};
  EXPECT_EQ(canonicalize_signs(b, 1e-12, order).vectors, (std::vector<double>{-0.5, -0.2, 0.1}));
  EXPECT_THROW(canonicalize_signs(b, 1e-12, std::vector<std::uint32_t>{0, 1}), Error);
}

TEST(SignCanonicalization, IdempotentAndSignBlind) {
  const auto basis = lanczos_smallest(fixture_matrix("grid5x7"), lanczos_only(4));
  const auto once = canonicalize_signs(basis, 1e-12);
  EXPECT_EQ(canonicalize_signs(once, 1e-12), once);
  auto flipped = basis;
  for (double& v : flipped.vectors) v = -v;
  EXPECT_EQ(canonicalize_signs(flipped, 1e-12), once);
}

TEST(DegenerateClusters, GroupsCloseValues) {
  const std::vector<double> v{0.0, 1e-12, 0.5, 0.7, 0.7, 0.7 + 1e-10};
  const auto c = degenerate_clusters(v);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0], (std::pair<std::size_t, std::size_t>{0, 2}));
  EXPECT_EQ(c[1], (std::pair<std::size_t, std::size_t>{3, 6}));
  EXPECT_TRUE(degenerate_clusters(std::vector<double>{0.0, 0.1}).empty());
}

TEST(Flops, StsBudgetForFourteenGrid) {
  reset_flops();
  const auto g = two_cluster_graph(14, 14, 5, 3);
  EigConfig cfg;
  lanczos_smallest(g.laplacian, cfg);
  const auto total = count_flops(Stage::Adjacency) + count_flops(Stage::Laplacian) + count_flops(Stage::Eigensolver);
  EXPECT_GT(count_flops(Stage::Eigensolver), 0u);
  EXPECT_LT(total, 10'000'000u);
}
