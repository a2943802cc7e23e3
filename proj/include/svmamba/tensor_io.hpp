#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "rng.hpp"

namespace svmamba {

/// Dense H x W x C raster, row-major with channels fastest.
struct ImageTensor {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> data;

  ImageTensor() = default;
  ImageTensor(std::size_t h, std::size_t w, std::size_t c)
      : height(h), width(w), channels(c), data(h * w * c, 0.0f) {}

  static ImageTensor from_data(std::size_t h, std::size_t w, std::size_t c,
                               std::vector<float> values) {
    if (values.size() != h * w * c) throw_shape("image data length does not match H*W*C");
    for (float v : values) {
      if (!std::isfinite(v) || v < 0.0f || v > 1.0f)
        throw_argument("image samples must be finite and within [0,1]");
    }
    ImageTensor img;
    img.height = h;
    img.width = w;
    img.channels = c;
    img.data = std::move(values);
    return img;
  }

  std::size_t index(std::size_t i, std::size_t j, std::size_t c) const {
    return (i * width + j) * channels + c;
  }
  float& at(std::size_t i, std::size_t j, std::size_t c) { return data[index(i, j, c)]; }
  float at(std::size_t i, std::size_t j, std::size_t c) const { return data[index(i, j, c)]; }

  bool operator==(const ImageTensor&) const = default;
};

/// Rotation by a multiple of 90 degrees counter-clockwise. Stored mod 4.
class QuarterTurn {
 public:
  constexpr QuarterTurn() = default;
  constexpr explicit QuarterTurn(int turns) : turns_(((turns % 4) + 4) % 4) {}

  constexpr int turns() const noexcept { return turns_; }
  constexpr bool is_odd() const noexcept { return (turns_ & 1) != 0; }
  constexpr QuarterTurn inverse() const noexcept { return QuarterTurn(4 - turns_); }
  constexpr QuarterTurn operator+(QuarterTurn other) const noexcept {
    return QuarterTurn(turns_ + other.turns_);
  }
  constexpr bool operator==(const QuarterTurn&) const = default;

 private:
  int turns_ = 0;
};

/// Rotates a row-major grid of `cell`-sized records. For one quarter turn the
/// output is (W x H) with out(i, j) = in(j, W-1-i); records are copied intact.
template <class T>
std::vector<T> rotate_grid(std::span<const T> in, std::size_t h, std::size_t w,
                           std::size_t cell, QuarterTurn q, std::size_t& out_h,
                           std::size_t& out_w) {
  const int t = q.turns();
  out_h = (t & 1) ? w : h;
  out_w = (t & 1) ? h : w;
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < out_h; ++i) {
    for (std::size_t j = 0; j < out_w; ++j) {
      std::size_t si = i, sj = j;
      switch (t) {
        case 1: si = j; sj = w - 1 - i; break;
        case 2: si = h - 1 - i; sj = w - 1 - j; break;
        case 3: si = h - 1 - j; sj = i; break;
        default: break;
      }
      const T* src = in.data() + (si * w + sj) * cell;
      std::copy(src, src + cell, out.begin() + static_cast<std::ptrdiff_t>((i * out_w + j) * cell));
    }
  }
  return out;
}

inline ImageTensor rotate_quarter(const ImageTensor& img, QuarterTurn q) {
  ImageTensor out;
  out.channels = img.channels;
  out.data = rotate_grid<float>(img.data, img.height, img.width, img.channels, q, out.height,
                                out.width);
  return out;
}

namespace detail {

class PpmCursor {
 public:
  explicit PpmCursor(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const auto ch = bytes_[pos_];
      if (ch == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (is_space(ch)) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t read_uint(const char* field) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t value = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (value > (1u << 24)) throw ParseError(start, std::string("PPM ") + field + " too large");
      ++pos_;
    }
    if (pos_ == start) throw ParseError(start, std::string("expected PPM ") + field);
    return value;
  }

  static bool is_space(std::uint8_t ch) {
    return ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r' || ch == '\v' || ch == '\f';
  }

  std::size_t pos_ = 0;
  std::span<const std::uint8_t> bytes_;
};

}  // namespace detail

/// Parses a binary P6 image with maxval 255; samples map to v / 255.
inline ImageTensor read_ppm(std::span<const std::uint8_t> bytes) {
  detail::PpmCursor cur(bytes);
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
    throw ParseError(0, "missing P6 magic");
  cur.pos_ = 2;
  const std::size_t width = cur.read_uint("width");
  const std::size_t height = cur.read_uint("height");
  const std::size_t maxval_at = cur.pos_;
  const std::size_t maxval = cur.read_uint("maxval");
  if (maxval != 255) throw ParseError(maxval_at, "maxval must be 255");
  if (width == 0 || height == 0) throw ParseError(maxval_at, "empty image");
  if (cur.pos_ >= bytes.size() || !detail::PpmCursor::is_space(bytes[cur.pos_]))
    throw ParseError(cur.pos_, "expected single whitespace after maxval");
  ++cur.pos_;
  const std::size_t payload = width * height * 3;
  if (bytes.size() - cur.pos_ < payload)
    throw ParseError(bytes.size(), "truncated payload: expected " + std::to_string(payload) +
                                       " bytes, found " + std::to_string(bytes.size() - cur.pos_));
  ImageTensor img(height, width, 3);
  for (std::size_t k = 0; k < payload; ++k)
    img.data[k] = static_cast<float>(bytes[cur.pos_ + k]) / 255.0f;
  return img;
}

inline std::vector<std::uint8_t> write_ppm(const ImageTensor& img) {
  if (img.channels != 3)
    throw Error(ErrorKind::UnsupportedFormat, "PPM output needs 3 channels, got " +
                                                  std::to_string(img.channels));
  const std::string header =
      "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + img.data.size());
  for (float v : img.data) {
    const float clamped = std::clamp(v, 0.0f, 1.0f);
    out.push_back(static_cast<std::uint8_t>(std::lround(clamped * 255.0f)));
  }
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, "short write to " + path);
}

inline ImageTensor load_ppm(const std::string& path) { return read_ppm(read_file_bytes(path)); }

inline void save_ppm(const std::string& path, const ImageTensor& img) {
  write_file_bytes(path, write_ppm(img));
}

/// Noise amplitude used by synth_two_cluster for a given gap.
inline double two_cluster_noise(double gap) { return std::min(gap / 8.0, (1.0 - gap) / 4.0); }

/// Two-region fixture: patch columns left of wp/2 are dark, the rest bright.
/// Base levels sit gap/2 + noise away from 0.5, so every left pixel is at least
/// `gap` darker than every right pixel.
inline ImageTensor synth_two_cluster(std::size_t hp, std::size_t wp, std::size_t patch, double gap,
                                     std::uint64_t seed, double noise) {
  if (hp < 2 || wp < 2 || patch == 0) throw_argument("two-cluster fixture needs hp, wp >= 2");
  if (!(gap > 0.0 && gap <= 1.0)) throw_argument("two-cluster gap must lie in (0, 1]");
  if (!(noise >= 0.0) || 0.5 - gap / 2.0 - 2.0 * noise < -1e-12)
    throw_argument("two-cluster noise amplitude does not fit in [0,1]");
  const double left = std::max(0.0, 0.5 - gap / 2.0 - noise);
  const double right = std::min(1.0, 0.5 + gap / 2.0 + noise);
  const std::size_t split = (wp / 2) * patch;
  ImageTensor img(hp * patch, wp * patch, 3);
  XorShift64Star rng(seed);
  for (std::size_t i = 0; i < img.height; ++i) {
    for (std::size_t j = 0; j < img.width; ++j) {
      const double base = j < split ? left : right;
      for (std::size_t c = 0; c < 3; ++c) {
        const double jitter = noise * (2.0 * rng.next_float() - 1.0);
        img.at(i, j, c) = static_cast<float>(std::clamp(base + jitter, 0.0, 1.0));
      }
    }
  }
  return img;
}

inline ImageTensor synth_two_cluster(std::size_t hp, std::size_t wp, std::size_t patch, double gap,
                                     std::uint64_t seed) {
  return synth_two_cluster(hp, wp, patch, gap, seed, two_cluster_noise(gap));
}

/// Smooth random scene: a handful of coloured Gaussian blobs plus a little
/// pixel noise. Generic position with overwhelming probability and free of
/// rotational symmetry, which the invariance suites rely on.
inline ImageTensor synth_scene(std::size_t height, std::size_t width, std::uint64_t seed,
                               std::size_t blobs = 6, double noise = 0.03) {
  if (height == 0 || width == 0) throw_argument("scene dimensions must be positive");
  XorShift64Star rng(seed);
  struct Blob {
    double cy, cx, inv2s2;
    double amp[3];
  };
  std::vector<Blob> list(blobs);
  const double scale = static_cast<double>(std::max(height, width));
  for (auto& b : list) {
    b.cy = rng.uniform(0.0, static_cast<double>(height));
    b.cx = rng.uniform(0.0, static_cast<double>(width));
    const double s = rng.uniform(0.08, 0.3) * scale;
    b.inv2s2 = 1.0 / (2.0 * s * s);
    for (double& a : b.amp) a = rng.uniform(-0.6, 0.6);
  }
  ImageTensor img(height, width, 3);
  for (std::size_t i = 0; i < height; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      double acc[3] = {0.5, 0.5, 0.5};
      for (const auto& b : list) {
        const double dy = static_cast<double>(i) + 0.5 - b.cy;
        const double dx = static_cast<double>(j) + 0.5 - b.cx;
        const double g = std::exp(-(dy * dy + dx * dx) * b.inv2s2);
        for (int c = 0; c < 3; ++c) acc[c] += b.amp[c] * g;
      }
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = acc[c] + noise * (2.0 * rng.next_float() - 1.0);
        img.at(i, j, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return img;
}

}  // namespace svmamba
