#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "svmamba/ssm.hpp"
#include "test_support.hpp"

using namespace svmamba;

namespace {

S6Weights random_s6(std::size_t C, std::size_t N, std::uint64_t seed) {
  auto w = S6Weights::zeros(C, N);
  XorShift64Star rng(seed);
  const double b = 1.0 / std::sqrt(static_cast<double>(C));
  for (auto* v : {&w.in_proj, &w.in_bias, &w.dt_proj, &w.b_proj, &w.b_bias, &w.c_proj, &w.c_bias, &w.out_proj,
                  &w.out_bias})
    for (auto& x : *v) x = static_cast<float>(rng.uniform(-b, b));
  w.dt_bias = -1.5f;
  for (std::size_t i = 0; i < N; ++i) w.a_log[i] = static_cast<float>(std::log(static_cast<double>(i + 1)));
  for (auto& x : w.skip) x = static_cast<float>(rng.uniform(0.5, 1.5));
  return w;
}

TokenSequence random_tokens(std::size_t len, std::size_t C, std::uint64_t seed) {
  TokenSequence x(len, C);
  XorShift64Star rng(seed);
  for (auto& v : x.data) v = rng.uniform(-1, 1);
  return x;
}

std::vector<double> matvec(std::span<const double> x, const std::vector<float>& w, const std::vector<float>& b,
                           std::size_t out) {
  std::vector<double> y(out);
  for (std::size_t o = 0; o < out; ++o) {
    double acc = b[o];
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * w[i * out + o];
    y[o] = acc;
  }
  return y;
}

// Unrolled form: y_c(t) = sum_{s<=t} C_t . (prod_{r=s+1..t} decay_r) * gain_s * B_s * u_c(s) + D_c u_c(t).
TokenSequence selective_scan_unrolled(const S6Weights& w, const TokenSequence& x, ZohMode mode) {
  const std::size_t C = w.channels, N = w.state, L = x.length;
  std::vector<std::vector<double>> u(L), bt(L), ct(L), dt_a(L);
  std::vector<double> dt(L);
  for (std::size_t t = 0; t < L; ++t) {
    u[t] = matvec(x.token(t), w.in_proj, w.in_bias, C);
    double z = w.dt_bias;
    for (std::size_t c = 0; c < C; ++c) z += w.dt_proj[c] * u[t][c];
    dt[t] = std::log(1.0 + std::exp(z));
    bt[t] = matvec(u[t], w.b_proj, w.b_bias, N);
    ct[t] = matvec(u[t], w.c_proj, w.c_bias, N);
  }
  TokenSequence out(L, C);
  for (std::size_t t = 0; t < L; ++t) {
    std::vector<double> y(C);
    for (std::size_t c = 0; c < C; ++c) {
      double acc = w.skip[c] * u[t][c];
      for (std::size_t i = 0; i < N; ++i) {
        const double a = -std::exp(static_cast<double>(w.a_log[i]));
        for (std::size_t s = 0; s <= t; ++s) {
          double decay_sum = 0.0;
          for (std::size_t r = s + 1; r <= t; ++r) decay_sum += dt[r] * a;
          const double g = mode == ZohMode::Exact ? (std::exp(dt[s] * a) - 1.0) / a : dt[s];
          acc += ct[t][i] * std::exp(decay_sum) * g * bt[s][i] * u[s][c];
        }
      }
      y[c] = acc;
    }
    const auto o = matvec(y, w.out_proj, w.out_bias, C);
    std::copy(o.begin(), o.end(), out.token(t).begin());
  }
  return out;
}

}  // namespace

TEST(Zoh, SpecExampleValues) {
  const auto d = discretize_zoh({{-1.0}, {1.0}, {1.0}, 0.1});
  EXPECT_NEAR(d.a_bar[0], 0.90483742, 1e-8);
  EXPECT_DOUBLE_EQ(d.b_bar[0], 0.1);
  const auto e = discretize_zoh({{-1.0}, {1.0}, {1.0}, 0.1}, ZohMode::Exact);
  EXPECT_NEAR(e.b_bar[0], 1.0 - std::exp(-0.1), 1e-15);
  EXPECT_NEAR(e.a_bar[0], d.a_bar[0], 0.0);
}

TEST(Zoh, DoubleStepSquaresDecay) {
  const SsmParams p{{-0.3, -2.0, -7.5}, {1, 1, 1}, {1, 1, 1}, 0.25};
  SsmParams twice = p;
  twice.delta = 0.5;
  const auto a = discretize_zoh(p), b = discretize_zoh(twice);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(b.a_bar[i], a.a_bar[i] * a.a_bar[i], 1e-15);
    EXPECT_GT(a.a_bar[i], 0.0);
    EXPECT_LT(a.a_bar[i], 1.0);
  }
}

TEST(Zoh, ExactGainApproachesApproxForSmallSteps) {
  for (double delta : {1e-2, 1e-4, 1e-6}) {
    const double exact = zoh_input_gain(-3.0, delta, ZohMode::Exact);
    EXPECT_NEAR(exact / delta, 1.0, 2.0 * 3.0 * delta);
  }
  EXPECT_EQ(zoh_input_gain(0.0, 0.3, ZohMode::Exact), 0.3);
}

TEST(Zoh, RejectsNonPositiveStep) {
  EXPECT_THROW(discretize_zoh({{-1.0}, {1.0}, {1.0}, 0.0}), Error);
  EXPECT_THROW(discretize_zoh({{-1.0}, {1.0}, {1.0}, -0.5}), Error);
  EXPECT_THROW(discretize_zoh({{-1.0, -2.0}, {1.0}, {1.0}, 0.5}), Error);
}

TEST(Scan, RecurrentImpulseResponse) {
  const DiscretizedParams d{{0.5}, {1.0}};
  const std::vector<double> c{2.0};
  const std::vector<double> x{1.0, 0.0, 0.0};
  EXPECT_EQ(recurrent_scan(d, c, x), (std::vector<double>{2.0, 1.0, 0.5}));
  EXPECT_EQ(conv_kernel(d, c, 3), (std::vector<double>{2.0, 1.0, 0.5}));
  EXPECT_THROW(conv_kernel(d, c, 0), Error);
}

TEST(Scan, ConvolutionEqualsRecurrence) {
  XorShift64Star rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(8), len = 1 + rng.below(64);
    SsmParams p;
    for (std::size_t i = 0; i < n; ++i) {
      p.a.push_back(-rng.uniform(0.01, 5.0));
      p.b.push_back(rng.uniform(-1, 1));
      p.c.push_back(rng.uniform(-1, 1));
    }
    p.delta = rng.uniform(0.01, 1.0);
    const auto d = discretize_zoh(p, trial % 2 ? ZohMode::Exact : ZohMode::Approx);
    std::vector<double> x(len);
    for (auto& v : x) v = rng.uniform(-1, 1);
    const auto rec = recurrent_scan(d, p.c, x);
    const auto conv = conv_scan(d, p.c, x);
    for (std::size_t t = 0; t < len; ++t) EXPECT_NEAR(rec[t], conv[t], 1e-9 * std::max(1.0, std::abs(rec[t])));
  }
}

TEST(Scan, LinearInInput) {
  const DiscretizedParams d{{0.9, 0.2}, {0.5, -1.0}};
  const std::vector<double> c{1.0, 0.3};
  const std::vector<double> x1{1, -2, 0.5, 3}, x2{0.1, 0.4, -1, 2};
  std::vector<double> mix(4);
  for (std::size_t t = 0; t < 4; ++t) mix[t] = 2.0 * x1[t] - 0.5 * x2[t];
  const auto y1 = recurrent_scan(d, c, x1), y2 = recurrent_scan(d, c, x2), ym = recurrent_scan(d, c, mix);
  for (std::size_t t = 0; t < 4; ++t) EXPECT_NEAR(ym[t], 2.0 * y1[t] - 0.5 * y2[t], 1e-14);
}

TEST(Scan, BoundedInputGivesBoundedOutput) {
  const SsmParams p{{-0.1, -1.0, -4.0}, {1.0, -0.5, 2.0}, {0.3, 1.0, -0.7}, 0.2};
  const auto d = discretize_zoh(p);
  double bound = 0.0;
  for (std::size_t i = 0; i < 3; ++i) bound += std::abs(p.c[i] * d.b_bar[i]) / (1.0 - d.a_bar[i]);
  XorShift64Star rng(2);
  std::vector<double> x(5000);
  for (auto& v : x) v = rng.uniform(-1, 1);
  for (double y : recurrent_scan(d, p.c, x)) EXPECT_LE(std::abs(y), bound + 1e-12);
}

TEST(SelectiveScan, FrozenParametersReduceToLinearScan) {
  const std::size_t N = 3;
  auto w = S6Weights::zeros(1, N);
  w.in_proj = {1.0f};
  w.out_proj = {1.0f};
  w.dt_bias = -0.7f;
  w.b_bias = {0.5f, -1.0f, 0.25f};
  w.c_bias = {1.0f, 0.5f, -2.0f};
  w.a_log = {0.0f, 0.5f, 1.0f};
  const auto x = random_tokens(40, 1, 3);
  for (auto mode : {ZohMode::Approx, ZohMode::Exact}) {
    SsmParams p;
    p.delta = std::log1p(std::exp(static_cast<double>(w.dt_bias)));
    for (std::size_t i = 0; i < N; ++i) {
      p.a.push_back(-std::exp(static_cast<double>(w.a_log[i])));
      p.b.push_back(w.b_bias[i]);
      p.c.push_back(w.c_bias[i]);
    }
    const auto expect = recurrent_scan(discretize_zoh(p, mode), p.c, x.data);
    const auto got = selective_scan(w, x, mode);
    for (std::size_t t = 0; t < x.length; ++t) EXPECT_NEAR(got.data[t], expect[t], 1e-12);
  }
}

TEST(SelectiveScan, MatchesUnrolledOracle) {
  const auto w = random_s6(4, 3, 8);
  const auto x = random_tokens(12, 4, 9);
  for (auto mode : {ZohMode::Approx, ZohMode::Exact}) {
    const auto got = selective_scan(w, x, mode);
    const auto ref = selective_scan_unrolled(w, x, mode);
    for (std::size_t i = 0; i < got.data.size(); ++i) EXPECT_NEAR(got.data[i], ref.data[i], 1e-10);
  }
}

TEST(SelectiveScan, ZeroReadoutLeavesSkipPath) {
  auto w = random_s6(3, 4, 1);
  std::fill(w.c_proj.begin(), w.c_proj.end(), 0.0f);
  std::fill(w.c_bias.begin(), w.c_bias.end(), 0.0f);
  const auto x = random_tokens(10, 3, 2);
  const auto y = selective_scan(w, x);
  for (std::size_t t = 0; t < x.length; ++t) {
    const auto u = matvec(x.token(t), w.in_proj, w.in_bias, 3);
    std::vector<double> skip(3);
    for (std::size_t c = 0; c < 3; ++c) skip[c] = w.skip[c] * u[c];
    const auto expect = matvec(skip, w.out_proj, w.out_bias, 3);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(y.token(t)[c], expect[c], 1e-14);
  }
}

TEST(SelectiveScan, ZeroInputGivesOutputBias) {
  auto w = random_s6(3, 2, 4);
  std::fill(w.in_bias.begin(), w.in_bias.end(), 0.0f);
  const auto y = selective_scan(w, TokenSequence(7, 3));
  for (std::size_t t = 0; t < 7; ++t)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(y.token(t)[c], static_cast<double>(w.out_bias[c]));
}

TEST(SelectiveScan, CausalPrefix) {
  const auto w = random_s6(3, 4, 6);
  auto x = random_tokens(16, 3, 7);
  const auto full = selective_scan(w, x);
  for (std::size_t i = 8 * 3; i < x.data.size(); ++i) x.data[i] = 5.0;
  const auto altered = selective_scan(w, x);
  for (std::size_t i = 0; i < 8 * 3; ++i) EXPECT_EQ(full.data[i], altered.data[i]);
}

TEST(SelectiveScan, NonFiniteStepNamesIndex) {
  const auto w = random_s6(2, 2, 3);
  auto x = random_tokens(6, 2, 1);
  x.token(2)[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    selective_scan(w, x);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Numeric);
    EXPECT_EQ(e.step(), 2u);
  }
}

TEST(SelectiveScan, ShapeChecks) {
  auto w = random_s6(3, 2, 3);
  EXPECT_THROW(selective_scan(w, random_tokens(4, 2, 1)), Error);
  w.a_log.pop_back();
  EXPECT_THROW(selective_scan(w, random_tokens(4, 3, 1)), Error);
}

TEST(SelectiveScan, OperationCountHandTally) {
  // C = N = 1: in 3, dt 6, B and C 6, decay 2, gain 1, state/readout/skip 7, out 3
  EXPECT_EQ(selective_scan_ops(1, 1, 1), 28u);
  EXPECT_EQ(selective_scan_ops(10, 1, 1), 280u);
}
