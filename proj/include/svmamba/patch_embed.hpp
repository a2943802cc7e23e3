#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <future>
#include <span>
#include <vector>

#include "error.hpp"
#include "tensor_io.hpp"

namespace svmamba {

/// Linear patch projection. `projection` is (patch*patch*in_channels) x
/// out_channels, row-major; the input patch is flattened row-major with the
/// channel index fastest.
struct StemWeights {
  std::size_t patch = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::vector<float> projection;
  std::vector<float> bias;

  std::size_t patch_len() const { return patch * patch * in_channels; }

  void validate() const {
    if (patch == 0 || in_channels == 0 || out_channels == 0)
      throw_shape("stem dimensions must be positive");
    if (projection.size() != patch_len() * out_channels || bias.size() != out_channels)
      throw_shape("stem projection/bias sizes do not match declared dimensions");
    for (float v : projection)
      if (!std::isfinite(v)) throw_argument("stem projection contains non-finite entries");
    for (float v : bias)
      if (!std::isfinite(v)) throw_argument("stem bias contains non-finite entries");
  }
};

/// hp x wp grid of C-channel tokens, row-major, channels fastest.
struct FeatureMap {
  std::size_t hp = 0;
  std::size_t wp = 0;
  std::size_t channels = 0;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(std::size_t h, std::size_t w, std::size_t c)
      : hp(h), wp(w), channels(c), data(h * w * c, 0.0) {}

  std::size_t tokens() const { return hp * wp; }
  std::span<double> token(std::size_t i) { return {data.data() + i * channels, channels}; }
  std::span<const double> token(std::size_t i) const {
    return {data.data() + i * channels, channels};
  }
  double& at(std::size_t r, std::size_t c, std::size_t ch) {
    return data[(r * wp + c) * channels + ch];
  }
  double at(std::size_t r, std::size_t c, std::size_t ch) const {
    return data[(r * wp + c) * channels + ch];
  }

  bool operator==(const FeatureMap&) const = default;
};

/// Rotates the token grid; channel contents of each token are untouched.
inline FeatureMap rotate_feature_map(const FeatureMap& f, QuarterTurn q) {
  FeatureMap out;
  out.channels = f.channels;
  out.data = rotate_grid<double>(f.data, f.hp, f.wp, f.channels, q, out.hp, out.wp);
  return out;
}

inline FeatureMap patchify(const ImageTensor& img, const StemWeights& w) {
  w.validate();
  if (img.channels != w.in_channels)
    throw_shape("image has " + std::to_string(img.channels) + " channels, stem expects " +
                std::to_string(w.in_channels));
  if (img.height % w.patch != 0 || img.width % w.patch != 0)
    throw_shape("patch size " + std::to_string(w.patch) + " does not divide image " +
                std::to_string(img.height) + "x" + std::to_string(img.width));
  const std::size_t p = w.patch;
  const std::size_t C = w.out_channels;
  FeatureMap out(img.height / p, img.width / p, C);
  std::vector<double> acc(C);
  for (std::size_t r = 0; r < out.hp; ++r) {
    for (std::size_t c = 0; c < out.wp; ++c) {
      for (std::size_t o = 0; o < C; ++o) acc[o] = w.bias[o];
      std::size_t k = 0;
      for (std::size_t dy = 0; dy < p; ++dy) {
        for (std::size_t dx = 0; dx < p; ++dx) {
          for (std::size_t ch = 0; ch < img.channels; ++ch, ++k) {
            const double x = img.at(r * p + dy, c * p + dx, ch);
            const float* row = w.projection.data() + k * C;
            for (std::size_t o = 0; o < C; ++o) acc[o] += x * static_cast<double>(row[o]);
          }
        }
      }
      std::copy(acc.begin(), acc.end(), out.token(r * out.wp + c).begin());
    }
  }
  return out;
}

/// Rotational feature normalizer: element-wise max over the requested quarter
/// turns of the back-rotated stem features. With the full turn set the result
/// is exactly equivariant: rfn(rot(I, q)) == rot(rfn(I), q).
inline FeatureMap rfn_aggregate(const ImageTensor& img, const StemWeights& w,
                                std::span<const QuarterTurn> turns, bool parallel = false) {
  if (turns.empty()) throw_argument("RFN needs at least one rotation");
  const bool any_odd = std::any_of(turns.begin(), turns.end(), [](QuarterTurn q) { return q.is_odd(); });
  if (any_odd && img.height != img.width)
    throw_shape("odd quarter turns need a square image, got " + std::to_string(img.height) + "x" +
                std::to_string(img.width));

  auto branch = [&](QuarterTurn q) {
    return rotate_feature_map(patchify(rotate_quarter(img, q), w), q.inverse());
  };

  std::vector<FeatureMap> maps(turns.size());
  if (parallel && turns.size() > 1) {
    std::vector<std::future<FeatureMap>> jobs;
    jobs.reserve(turns.size());
    for (QuarterTurn q : turns) jobs.push_back(std::async(std::launch::async, branch, q));
    for (std::size_t r = 0; r < jobs.size(); ++r) maps[r] = jobs[r].get();
  } else {
    for (std::size_t r = 0; r < turns.size(); ++r) maps[r] = branch(turns[r]);
  }

  FeatureMap out = std::move(maps[0]);
  for (std::size_t r = 1; r < maps.size(); ++r)
    for (std::size_t k = 0; k < out.data.size(); ++k) out.data[k] = std::max(out.data[k], maps[r].data[k]);
  return out;
}

inline FeatureMap rfn_aggregate(const ImageTensor& img, const StemWeights& w,
                                std::initializer_list<QuarterTurn> turns, bool parallel = false) {
  return rfn_aggregate(img, w, std::span<const QuarterTurn>(turns.begin(), turns.size()), parallel);
}

inline std::vector<QuarterTurn> all_quarter_turns() {
  return {QuarterTurn(0), QuarterTurn(1), QuarterTurn(2), QuarterTurn(3)};
}

}  // namespace svmamba
