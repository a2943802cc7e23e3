#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "sparse.hpp"
#include "traversal.hpp"

namespace svmamba {

/// Continuous diagonal SSM with a scalar input: h' = diag(A) h + B x, y = C h.
struct SsmParams {
  std::vector<double> a;  // diagonal of A; negative for a stable system
  std::vector<double> b;
  std::vector<double> c;
  double delta = 1.0;

  std::size_t state_dim() const { return a.size(); }
};

enum class ZohMode {
  Approx,  // B_bar = delta * B
  Exact,   // B_bar = (exp(delta A) - 1) / A * B
};

struct DiscretizedParams {
  std::vector<double> a_bar;
  std::vector<double> b_bar;
};

inline double zoh_input_gain(double a, double delta, ZohMode mode) {
  if (mode == ZohMode::Approx || a == 0.0) return delta;
  return std::expm1(delta * a) / a;
}

inline DiscretizedParams discretize_zoh(const SsmParams& p, ZohMode mode = ZohMode::Approx) {
  if (!(p.delta > 0.0)) throw_argument("ZOH step must be positive, got " + format_double(p.delta));
  if (p.b.size() != p.a.size()) throw_shape("A and B state dimensions differ");
  DiscretizedParams d;
  d.a_bar.resize(p.a.size());
  d.b_bar.resize(p.a.size());
  for (std::size_t i = 0; i < p.a.size(); ++i) {
    d.a_bar[i] = std::exp(p.delta * p.a[i]);
    d.b_bar[i] = zoh_input_gain(p.a[i], p.delta, mode) * p.b[i];
  }
  return d;
}

/// h(t) = A_bar h(t-1) + B_bar x(t), y(t) = C h(t), h(0) = 0.
inline std::vector<double> recurrent_scan(const DiscretizedParams& d, std::span<const double> c,
                                          std::span<const double> x) {
  const std::size_t n = d.a_bar.size();
  if (d.b_bar.size() != n || c.size() != n) throw_shape("scan parameter state dimensions differ");
  std::vector<double> h(n, 0.0);
  std::vector<double> y(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      h[i] = d.a_bar[i] * h[i] + d.b_bar[i] * x[t];
      acc += c[i] * h[i];
    }
    y[t] = acc;
  }
  return y;
}

/// K[s] = C A_bar^s B_bar for s = 0..len-1.
inline std::vector<double> conv_kernel(const DiscretizedParams& d, std::span<const double> c, std::size_t len) {
  const std::size_t n = d.a_bar.size();
  if (len < 1) throw_argument("kernel length must be at least 1");
  if (d.b_bar.size() != n || c.size() != n) throw_shape("scan parameter state dimensions differ");
  std::vector<double> k(len, 0.0);
  std::vector<double> power = d.b_bar;
  for (std::size_t s = 0; s < len; ++s) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += c[i] * power[i];
    k[s] = acc;
    for (std::size_t i = 0; i < n; ++i) power[i] *= d.a_bar[i];
  }
  return k;
}

/// Causal convolution y(t) = sum_{s<=t} K[s] x(t-s).
inline std::vector<double> conv_scan(std::span<const double> kernel, std::span<const double> x) {
  if (kernel.size() < x.size()) throw_shape("kernel shorter than the sequence");
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t t = 0; t < x.size(); ++t) {
    double acc = 0.0;
    for (std::size_t s = 0; s <= t; ++s) acc += kernel[s] * x[t - s];
    y[t] = acc;
  }
  return y;
}

inline std::vector<double> conv_scan(const DiscretizedParams& d, std::span<const double> c,
                                     std::span<const double> x) {
  if (x.empty()) return {};
  return conv_scan(conv_kernel(d, c, x.size()), x);
}

/// One selective-scan unit over C channels with an N-dimensional diagonal
/// state per channel. Matrices are row-major (input x output).
///   u   = x W_in + b_in
///   dt  = softplus(w_dt . u + b_dt)
///   B   = u W_B + b_B,  C = u W_C + b_C
///   h_c = exp(dt A) * h_c + gain(dt) B u_c;  y_c = C . h_c + D_c u_c
///   out = y W_out + b_out
/// with A = -exp(A_log).
struct S6Weights {
  std::size_t channels = 0;
  std::size_t state = 0;
  std::vector<float> in_proj, in_bias;
  std::vector<float> dt_proj;
  float dt_bias = 0.0f;
  std::vector<float> b_proj, b_bias;
  std::vector<float> c_proj, c_bias;
  std::vector<float> a_log;
  std::vector<float> skip;
  std::vector<float> out_proj, out_bias;

  static S6Weights zeros(std::size_t channels, std::size_t state) {
    S6Weights w;
    w.channels = channels;
    w.state = state;
    w.in_proj.assign(channels * channels, 0.0f);
    w.in_bias.assign(channels, 0.0f);
    w.dt_proj.assign(channels, 0.0f);
    w.b_proj.assign(channels * state, 0.0f);
    w.b_bias.assign(state, 0.0f);
    w.c_proj.assign(channels * state, 0.0f);
    w.c_bias.assign(state, 0.0f);
    w.a_log.assign(state, 0.0f);
    w.skip.assign(channels, 0.0f);
    w.out_proj.assign(channels * channels, 0.0f);
    w.out_bias.assign(channels, 0.0f);
    return w;
  }

  void validate() const {
    const std::size_t C = channels, N = state;
    if (in_proj.size() != C * C || in_bias.size() != C || dt_proj.size() != C ||
        b_proj.size() != C * N || b_bias.size() != N || c_proj.size() != C * N || c_bias.size() != N ||
        a_log.size() != N || skip.size() != C || out_proj.size() != C * C || out_bias.size() != C)
      throw_shape("S6 weight sizes do not match C=" + std::to_string(C) + ", N=" + std::to_string(N));
  }
};

/// Counted operations of one selective scan of `len` tokens.
inline std::uint64_t selective_scan_ops(std::size_t len, std::size_t C, std::size_t N) {
  const std::uint64_t per_step = 2 * C * C + C        // input projection
                                 + 2 * C + 4          // dt: dot, bias, softplus (exp, add, log)
                                 + 2 * (2 * C * N + N)  // B and C projections
                                 + 2 * N               // dt*A and exp per state
                                 + N                   // gain * B
                                 + C * (5 * N + 2)     // state update, readout, skip
                                 + 2 * C * C + C;      // output projection
  return per_step * len;
}

namespace detail {

inline double softplus(double z) { return z > 20.0 ? z : std::log1p(std::exp(z)); }

inline void affine(std::span<const double> x, const std::vector<float>& w, const std::vector<float>& b,
                   std::size_t out_dim, std::span<double> y) {
  for (std::size_t o = 0; o < out_dim; ++o) y[o] = b.empty() ? 0.0 : static_cast<double>(b[o]);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    const float* row = w.data() + i * out_dim;
    for (std::size_t o = 0; o < out_dim; ++o) y[o] += xi * static_cast<double>(row[o]);
  }
}

}  // namespace detail

/// Runs the selective scan over one token sequence. A non-finite step size or
/// output raises a NumericError carrying the step index.
inline TokenSequence selective_scan(const S6Weights& w, const TokenSequence& x, ZohMode mode = ZohMode::Approx) {
  w.validate();
  if (x.channels != w.channels) throw_shape("sequence channels do not match S6 weights");
  const std::size_t C = w.channels, N = w.state;
  std::vector<double> a(N);
  for (std::size_t i = 0; i < N; ++i) a[i] = -std::exp(static_cast<double>(w.a_log[i]));

  TokenSequence out(x.length, C);
  std::vector<double> u(C), bt(N), ct(N), decay(N), gain(N), y(C);
  std::vector<double> h(C * N, 0.0);
  for (std::size_t t = 0; t < x.length; ++t) {
    detail::affine(x.token(t), w.in_proj, w.in_bias, C, u);
    double z = static_cast<double>(w.dt_bias);
    for (std::size_t c = 0; c < C; ++c) z += static_cast<double>(w.dt_proj[c]) * u[c];
    const double dt = detail::softplus(z);
    if (!std::isfinite(dt) || !(dt > 0.0))
      throw NumericError(t, "selective scan step size is not a positive finite number");
    detail::affine(u, w.b_proj, w.b_bias, N, bt);
    detail::affine(u, w.c_proj, w.c_bias, N, ct);
    for (std::size_t i = 0; i < N; ++i) {
      decay[i] = std::exp(dt * a[i]);
      gain[i] = zoh_input_gain(a[i], dt, mode) * bt[i];
    }
    for (std::size_t c = 0; c < C; ++c) {
      double* hc = h.data() + c * N;
      double acc = static_cast<double>(w.skip[c]) * u[c];
      for (std::size_t i = 0; i < N; ++i) {
        hc[i] = decay[i] * hc[i] + gain[i] * u[c];
        acc += ct[i] * hc[i];
      }
      y[c] = acc;
    }
    auto dst = out.token(t);
    detail::affine(y, w.out_proj, w.out_bias, C, dst);
    for (double v : dst)
      if (!std::isfinite(v)) throw NumericError(t, "selective scan produced a non-finite output");
  }
  return out;
}

}  // namespace svmamba
