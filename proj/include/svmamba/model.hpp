#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <future>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "eigensolver.hpp"
#include "error.hpp"
#include "patch_embed.hpp"
#include "rng.hpp"
#include "spectral_graph.hpp"
#include "ssm.hpp"
#include "tensor_io.hpp"
#include "traversal.hpp"

namespace svmamba {

inline const char* merge_mode_name(MergeMode m) {
  switch (m) {
    case MergeMode::ConcatProjection: return "concat_proj";
    case MergeMode::Sum: return "sum";
    case MergeMode::Mean: return "mean";
    case MergeMode::Select: return "select";
  }
  return "?";
}

inline MergeMode parse_merge_mode(const std::string& s) {
  if (s == "concat_proj") return MergeMode::ConcatProjection;
  if (s == "sum") return MergeMode::Sum;
  if (s == "mean") return MergeMode::Mean;
  throw_argument("unknown merge mode '" + s + "' (expected concat_proj, sum or mean)");
}

inline const char* zoh_mode_name(ZohMode m) { return m == ZohMode::Exact ? "exact" : "approx"; }

inline ZohMode parse_zoh_mode(const std::string& s) {
  if (s == "approx") return ZohMode::Approx;
  if (s == "exact") return ZohMode::Exact;
  throw_argument("unknown zoh mode '" + s + "' (expected approx or exact)");
}

struct ModelConfig {
  std::size_t image_size = 56;  // synthetic inputs and weight generation
  std::size_t in_channels = 3;
  std::size_t p = 4;
  std::size_t channels = 32;
  std::size_t state = 8;
  std::size_t m = 4;
  std::size_t k = 5;
  std::vector<std::size_t> layout{2, 2, 5, 2};
  MergeMode merge = MergeMode::ConcatProjection;
  ZohMode zoh = ZohMode::Approx;
  std::size_t num_classes = 10;
  std::vector<QuarterTurn> turns = all_quarter_turns();
  double sigma_floor = 1e-12;
  double eig_tol = 1e-8;
  std::uint64_t weight_seed = 0;
  std::uint64_t image_seed = 1;

  std::size_t blocks() const {
    std::size_t total = 0;
    for (auto b : layout) total += b;
    return total;
  }
  std::size_t sequences() const { return 2 * m; }

  void validate() const {
    if (p == 0 || channels == 0 || state == 0 || in_channels == 0 || num_classes == 0)
      throw_argument("config dimensions must be positive");
    if (m == 0) throw_argument("config m must be at least 1");
    if (k == 0) throw_argument("config k must be at least 1");
    if (layout.empty()) throw_argument("config layout must list at least one layer");
    if (turns.empty()) throw_argument("config turns must not be empty");
    if (!(sigma_floor > 0.0) || !(eig_tol > 0.0)) throw_argument("tolerances must be positive");
    if (merge == MergeMode::Select) throw_argument("select merge is not a model mode");
  }

  /// key=value lines in a fixed key order.
  std::string serialize() const {
    std::ostringstream out;
    auto join = [](const auto& xs, auto fn) {
      std::string s;
      for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + fn(xs[i]);
      return s;
    };
    out << "image_size=" << image_size << "\n"
        << "in_channels=" << in_channels << "\n"
        << "p=" << p << "\n"
        << "C=" << channels << "\n"
        << "N=" << state << "\n"
        << "m=" << m << "\n"
        << "k=" << k << "\n"
        << "layout=" << join(layout, [](std::size_t v) { return std::to_string(v); }) << "\n"
        << "merge_mode=" << merge_mode_name(merge) << "\n"
        << "zoh_mode=" << zoh_mode_name(zoh) << "\n"
        << "num_classes=" << num_classes << "\n"
        << "turns=" << join(turns, [](QuarterTurn q) { return std::to_string(q.turns()); }) << "\n"
        << "sigma_floor=" << format_double(sigma_floor) << "\n"
        << "eig_tol=" << format_double(eig_tol) << "\n"
        << "weight_seed=" << weight_seed << "\n"
        << "image_seed=" << image_seed << "\n";
    return out.str();
  }

  void set(const std::string& key, const std::string& value) {
    auto as_size = [&](const std::string& v) -> std::size_t {
      std::size_t pos = 0;
      unsigned long long r = 0;
      try {
        r = std::stoull(v, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos != v.size() || v.empty() || v[0] == '-')
        throw_argument("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
      return static_cast<std::size_t>(r);
    };
    auto as_double = [&](const std::string& v) {
      std::size_t pos = 0;
      double r = 0.0;
      try {
        r = std::stod(v, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos != v.size() || v.empty()) throw_argument("config key '" + key + "' expects a number, got '" + v + "'");
      return r;
    };
    auto as_list = [&](const std::string& v) {
      std::vector<std::size_t> out;
      std::stringstream ss(v);
      std::string item;
      while (std::getline(ss, item, ',')) out.push_back(as_size(item));
      return out;
    };
    if (key == "image_size") image_size = as_size(value);
    else if (key == "in_channels") in_channels = as_size(value);
    else if (key == "p") p = as_size(value);
    else if (key == "C") channels = as_size(value);
    else if (key == "N") state = as_size(value);
    else if (key == "m") m = as_size(value);
    else if (key == "k") k = as_size(value);
    else if (key == "layout") layout = as_list(value);
    else if (key == "merge_mode") merge = parse_merge_mode(value);
    else if (key == "zoh_mode") zoh = parse_zoh_mode(value);
    else if (key == "num_classes") num_classes = as_size(value);
    else if (key == "turns") {
      turns.clear();
      for (auto t : as_list(value)) {
        if (t > 3) throw_argument("turns entries must lie in 0..3");
        turns.emplace_back(static_cast<int>(t));
      }
    } else if (key == "sigma_floor") sigma_floor = as_double(value);
    else if (key == "eig_tol") eig_tol = as_double(value);
    else if (key == "weight_seed") weight_seed = as_size(value);
    else if (key == "image_seed") image_seed = as_size(value);
    else throw_argument("unknown config key '" + key + "'");
  }

  /// Parses key=value lines; '#' starts a comment. Unknown keys are errors.
  static ModelConfig parse(const std::string& text) {
    ModelConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t offset = 0;
    while (std::getline(in, line)) {
      const std::size_t line_offset = offset;
      offset += line.size() + 1;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string{};
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ParseError(line_offset, "config line lacks '=': " + line);
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
  }
};

inline ModelConfig load_config(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return ModelConfig::parse(std::string(bytes.begin(), bytes.end()));
}

struct BlockWeights {
  std::vector<float> norm_gamma;
  std::vector<float> norm_beta;
  std::vector<S6Weights> scans;  // one per traversal sequence
  std::vector<float> merge_proj;  // (2m*C) x C
  std::vector<float> merge_bias;
};

struct ModelWeights {
  StemWeights stem;
  std::vector<BlockWeights> blocks;
  std::vector<float> head_proj;  // C x num_classes
  std::vector<float> head_bias;
};

/// Named tensor view used by SVW1 serialization and by the generator, in a
/// fixed order.
struct TensorRef {
  std::string name;
  std::vector<std::size_t> dims;
  std::vector<float>* data;
};

inline std::vector<TensorRef> tensor_table(ModelWeights& w) {
  std::vector<TensorRef> t;
  const std::size_t C = w.stem.out_channels;
  t.push_back({"stem.projection", {w.stem.patch_len(), C}, &w.stem.projection});
  t.push_back({"stem.bias", {C}, &w.stem.bias});
  for (std::size_t b = 0; b < w.blocks.size(); ++b) {
    auto& blk = w.blocks[b];
    const std::string pre = "block." + std::to_string(b) + ".";
    t.push_back({pre + "norm.gamma", {C}, &blk.norm_gamma});
    t.push_back({pre + "norm.beta", {C}, &blk.norm_beta});
    for (std::size_t s = 0; s < blk.scans.size(); ++s) {
      auto& sc = blk.scans[s];
      const std::size_t N = sc.state;
      const std::string sp = pre + "scan." + std::to_string(s) + ".";
      t.push_back({sp + "in_proj", {C, C}, &sc.in_proj});
      t.push_back({sp + "in_bias", {C}, &sc.in_bias});
      t.push_back({sp + "dt_proj", {C}, &sc.dt_proj});
      t.push_back({sp + "b_proj", {C, N}, &sc.b_proj});
      t.push_back({sp + "b_bias", {N}, &sc.b_bias});
      t.push_back({sp + "c_proj", {C, N}, &sc.c_proj});
      t.push_back({sp + "c_bias", {N}, &sc.c_bias});
      t.push_back({sp + "a_log", {N}, &sc.a_log});
      t.push_back({sp + "skip", {C}, &sc.skip});
      t.push_back({sp + "out_proj", {C, C}, &sc.out_proj});
      t.push_back({sp + "out_bias", {C}, &sc.out_bias});
    }
    t.push_back({pre + "merge.projection", {blk.scans.size() * C, C}, &blk.merge_proj});
    t.push_back({pre + "merge.bias", {C}, &blk.merge_bias});
  }
  t.push_back({"head.projection", {C, w.head_bias.size()}, &w.head_proj});
  t.push_back({"head.bias", {w.head_bias.size()}, &w.head_bias});
  return t;
}

/// Allocates every tensor with its configured shape, filled with zeros. The
/// scalar step bias lives in its own one-element record.
inline ModelWeights zero_weights(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t C = cfg.channels;
  ModelWeights w;
  w.stem.patch = cfg.p;
  w.stem.in_channels = cfg.in_channels;
  w.stem.out_channels = C;
  w.stem.projection.assign(w.stem.patch_len() * C, 0.0f);
  w.stem.bias.assign(C, 0.0f);
  w.blocks.resize(cfg.blocks());
  for (auto& blk : w.blocks) {
    blk.norm_gamma.assign(C, 1.0f);
    blk.norm_beta.assign(C, 0.0f);
    blk.scans.assign(cfg.sequences(), S6Weights::zeros(C, cfg.state));
    blk.merge_proj.assign(cfg.sequences() * C * C, 0.0f);
    blk.merge_bias.assign(C, 0.0f);
  }
  w.head_proj.assign(C * cfg.num_classes, 0.0f);
  w.head_bias.assign(cfg.num_classes, 0.0f);
  return w;
}

/// Seeded weights. One xorshift64* stream (seeded with cfg.weight_seed) is
/// consumed in tensor-table order; every matrix and bias entry is drawn
/// uniformly from [-1/sqrt(fan_in), 1/sqrt(fan_in)] where fan_in is the
/// matrix row count. Fixed initializers (not drawn): norm gamma 1, beta 0,
/// step bias -2.25, A_log[i] = log(i+1), skip 1.
inline ModelWeights generate_weights(const ModelConfig& cfg) {
  ModelWeights w = zero_weights(cfg);
  XorShift64Star rng(cfg.weight_seed);
  for (auto& blk : w.blocks) {
    for (auto& sc : blk.scans) {
      sc.dt_bias = -2.25f;
      for (std::size_t i = 0; i < sc.state; ++i) sc.a_log[i] = static_cast<float>(std::log(static_cast<double>(i + 1)));
      std::fill(sc.skip.begin(), sc.skip.end(), 1.0f);
    }
  }
  auto fixed = [](const std::string& name) {
    auto ends = [&](const char* suffix) {
      const std::size_t n = std::strlen(suffix);
      return name.size() >= n && name.compare(name.size() - n, n, suffix) == 0;
    };
    return ends("norm.gamma") || ends("norm.beta") || ends("a_log") || ends("skip");
  };
  std::size_t fan_in = 1;
  for (auto& ref : tensor_table(w)) {
    if (fixed(ref.name)) continue;
    // biases share the fan-in of the matrix listed before them
    if (ref.dims.size() == 2) fan_in = ref.dims[0];
    if (ref.name.size() >= 7 && ref.name.compare(ref.name.size() - 7, 7, "dt_proj") == 0) fan_in = ref.dims[0];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (float& v : *ref.data) v = static_cast<float>(rng.uniform(-bound, bound));
  }
  return w;
}

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[at + i]) << (8 * i);
  return v;
}

constexpr char kSvwMagic[8] = {'S', 'V', 'W', '1', 0, 0, 0, 0};

}  // namespace detail

/// SVW1: 8-byte magic, u32 LE header length, header text with one
/// "name rank d0 d1 ..." line per tensor, then little-endian float32 payloads
/// in header order. The step bias of each scan is stored as a rank-1 tensor.
inline std::vector<std::uint8_t> save_weights(const ModelWeights& weights) {
  ModelWeights w = weights;
  std::vector<std::vector<float>> dt(w.blocks.size() * (w.blocks.empty() ? 0 : w.blocks[0].scans.size()));
  auto table = tensor_table(w);
  std::size_t slot = 0;
  for (std::size_t b = 0; b < w.blocks.size(); ++b)
    for (std::size_t s = 0; s < w.blocks[b].scans.size(); ++s, ++slot) {
      dt[slot] = {w.blocks[b].scans[s].dt_bias};
      table.push_back({"block." + std::to_string(b) + ".scan." + std::to_string(s) + ".dt_bias", {1}, &dt[slot]});
    }
  std::string header;
  for (const auto& t : table) {
    header += t.name + " " + std::to_string(t.dims.size());
    std::size_t count = 1;
    for (auto d : t.dims) {
      header += " " + std::to_string(d);
      count *= d;
    }
    header += "\n";
    if (count != t.data->size()) throw_shape("tensor " + t.name + " does not match its declared shape");
  }
  std::vector<std::uint8_t> out(detail::kSvwMagic, detail::kSvwMagic + 8);
  detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  for (const auto& t : table)
    for (float v : *t.data) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      detail::put_u32(out, bits);
    }
  return out;
}

/// Loads an SVW1 file whose tensor list must match `cfg` exactly.
inline ModelWeights load_weights(std::span<const std::uint8_t> bytes, const ModelConfig& cfg) {
  if (bytes.size() < 12 || !std::equal(detail::kSvwMagic, detail::kSvwMagic + 8, bytes.begin()))
    throw ParseError(0, "missing SVW1 magic");
  const std::size_t header_len = detail::get_u32(bytes, 8);
  if (bytes.size() < 12 + header_len) throw ParseError(8, "SVW1 header length exceeds file size");
  const std::string header(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(header_len));

  ModelWeights w = zero_weights(cfg);
  std::vector<std::vector<float>> dt(w.blocks.size() * cfg.sequences());
  auto table = tensor_table(w);
  std::size_t slot = 0;
  for (std::size_t b = 0; b < w.blocks.size(); ++b)
    for (std::size_t s = 0; s < cfg.sequences(); ++s, ++slot) {
      dt[slot] = {0.0f};
      table.push_back({"block." + std::to_string(b) + ".scan." + std::to_string(s) + ".dt_bias", {1}, &dt[slot]});
    }

  std::istringstream in(header);
  std::string line;
  std::size_t index = 0;
  std::size_t line_offset = 12;
  std::size_t payload = 12 + header_len;
  while (std::getline(in, line)) {
    const std::size_t here = line_offset;
    line_offset += line.size() + 1;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name;
    std::size_t rank = 0;
    if (!(ls >> name >> rank)) throw ParseError(here, "malformed SVW1 header line");
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims)
      if (!(ls >> d)) throw ParseError(here, "SVW1 header line lists fewer dims than its rank");
    if (index >= table.size() || table[index].name != name || table[index].dims != dims)
      throw_shape("SVW1 tensor '" + name + "' does not match the configured model at record " +
                  std::to_string(index));
    auto& dst = *table[index].data;
    if (bytes.size() < payload + 4 * dst.size()) throw ParseError(payload, "SVW1 payload truncated at " + name);
    for (auto& v : dst) {
      const std::uint32_t bits = detail::get_u32(bytes, payload);
      std::memcpy(&v, &bits, 4);
      if (!std::isfinite(v)) throw ParseError(payload, "non-finite weight in " + name);
      payload += 4;
    }
    ++index;
  }
  if (index != table.size()) throw_shape("SVW1 file lists " + std::to_string(index) + " tensors, expected " +
                                         std::to_string(table.size()));
  if (payload != bytes.size()) throw ParseError(payload, "trailing bytes after SVW1 payload");
  slot = 0;
  for (auto& blk : w.blocks)
    for (auto& sc : blk.scans) sc.dt_bias = dt[slot++][0];
  return w;
}

/// Per-token layer normalization (population variance, eps 1e-5).
inline FeatureMap layer_norm(const FeatureMap& f, std::span<const float> gamma, std::span<const float> beta) {
  if (gamma.size() != f.channels || beta.size() != f.channels) throw_shape("layer norm parameter size");
  FeatureMap out(f.hp, f.wp, f.channels);
  const double C = static_cast<double>(f.channels);
  for (std::size_t i = 0; i < f.tokens(); ++i) {
    const auto x = f.token(i);
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= C;
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= C;
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    auto y = out.token(i);
    for (std::size_t c = 0; c < f.channels; ++c)
      y[c] = (x[c] - mean) * inv * static_cast<double>(gamma[c]) + static_cast<double>(beta[c]);
  }
  return out;
}

inline MergeWeights merge_weights_for(const BlockWeights& blk, MergeMode mode) {
  MergeWeights mix;
  mix.mode = mode;
  if (mode == MergeMode::ConcatProjection) {
    mix.projection = blk.merge_proj;
    mix.bias = blk.merge_bias;
  }
  return mix;
}

struct ForwardOptions {
  bool parallel = false;
};

/// out = f + merge(selective_scan_t(apply_scan(norm(f))_t) for each t).
inline FeatureMap block_forward(const FeatureMap& f, const TraversalPlan& plan, const BlockWeights& w,
                                const MergeWeights& mix, ZohMode zoh = ZohMode::Approx,
                                const ForwardOptions& opt = {}) {
  if (w.scans.size() != plan.sequences())
    throw_shape("block has " + std::to_string(w.scans.size()) + " scans, plan has " +
                std::to_string(plan.sequences()) + " sequences");
  const auto seqs = apply_scan(layer_norm(f, w.norm_gamma, w.norm_beta), plan);
  std::vector<TokenSequence> scanned(seqs.size());
  if (opt.parallel && seqs.size() > 1) {
    std::vector<std::future<TokenSequence>> jobs;
    for (std::size_t t = 0; t < seqs.size(); ++t)
      jobs.push_back(std::async(std::launch::async, [&, t] { return selective_scan(w.scans[t], seqs[t], zoh); }));
    for (std::size_t t = 0; t < seqs.size(); ++t) scanned[t] = jobs[t].get();
  } else {
    for (std::size_t t = 0; t < seqs.size(); ++t) scanned[t] = selective_scan(w.scans[t], seqs[t], zoh);
  }
  if (!w.scans.empty())
    count_ops(Stage::Scan, seqs.size() * selective_scan_ops(plan.n, f.channels, w.scans[0].state));
  FeatureMap out = merge_scan(scanned, plan, mix);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += f.data[i];
  return out;
}

/// Spectral traversal setup computed once per image.
struct StsResult {
  NodeFeatures nodes;
  AffinityGraph graph;
  SpectralBasis basis;
  TraversalPlan plan;
  EigReport eig;
};

struct StsConfig {
  std::size_t m = 4;
  std::size_t k = 5;
  double sigma_floor = 1e-12;
  double eig_tol = 1e-8;
  std::size_t dense_threshold = 64;

  static StsConfig from(const ModelConfig& cfg) { return {cfg.m, cfg.k, cfg.sigma_floor, cfg.eig_tol, 64}; }
};

/// Graph, smallest eigenpairs, sign canonicalization against the
/// content-sorted node order, and the traversal plan.
inline StsResult build_sts(const FeatureMap& f, const StsConfig& cfg) {
  StsResult r;
  r.nodes = flatten_features(f);
  if (r.nodes.n < 2)
    throw DegenerateGraphError(0, "graph construction needs at least two tokens, got " + std::to_string(r.nodes.n));
  if (cfg.k >= r.nodes.n)
    throw_argument("k=" + std::to_string(cfg.k) + " must be below the token count " + std::to_string(r.nodes.n));
  if (cfg.m > r.nodes.n)
    throw_argument("m=" + std::to_string(cfg.m) + " exceeds the token count " + std::to_string(r.nodes.n));
  GraphConfig g;
  g.k = cfg.k;
  g.sigma_floor = cfg.sigma_floor;
  r.graph = build_graph(r.nodes, g);
  EigConfig e;
  e.m = cfg.m;
  e.tol = cfg.eig_tol;
  e.dense_threshold = cfg.dense_threshold;
  r.basis = lanczos_smallest(r.graph.laplacian, e, &r.eig);
  r.basis = canonicalize_signs(std::move(r.basis), e.eps_sign, content_order(r.nodes));
  r.plan = build_plan(r.basis, {f.hp, f.wp});
  return r;
}

/// Intermediate states of one forward pass.
struct ForwardTrace {
  FeatureMap stem;
  StsResult sts;
  std::vector<FeatureMap> block_outputs;
  std::vector<TraversalPlan> layer_plans;
  std::vector<double> pooled;
};

inline void check_network_input(const ImageTensor& img, const ModelConfig& cfg) {
  if (img.height != img.width)
    throw_shape("network input must be square, got " + std::to_string(img.height) + "x" + std::to_string(img.width));
  if (img.height % cfg.p != 0) throw_shape("image side is not divisible by the patch size");
  if (img.channels != cfg.in_channels) throw_shape("image channel count does not match the config");
}

/// RFN stem, one STS, the block stack with index-guided downsampling between
/// layers (only while the token grid has even sides), global average pooling
/// and the linear classifier.
inline std::vector<double> network_forward(const ImageTensor& img, const ModelWeights& w, const ModelConfig& cfg,
                                           const ForwardOptions& opt = {}, ForwardTrace* trace = nullptr) {
  cfg.validate();
  check_network_input(img, cfg);
  if (w.blocks.size() != cfg.blocks()) throw_shape("weights hold a different number of blocks than the layout");

  FeatureMap f = rfn_aggregate(img, w.stem, cfg.turns, opt.parallel);
  StsResult sts = build_sts(f, StsConfig::from(cfg));
  TraversalPlan plan = sts.plan;
  SpectralBasis basis = sts.basis;
  if (trace) {
    trace->stem = f;
    trace->layer_plans.push_back(plan);
  }

  std::size_t b = 0;
  for (std::size_t layer = 0; layer < cfg.layout.size(); ++layer) {
    for (std::size_t i = 0; i < cfg.layout[layer]; ++i, ++b) {
      f = block_forward(f, plan, w.blocks[b], merge_weights_for(w.blocks[b], cfg.merge), cfg.zoh, opt);
      if (trace) trace->block_outputs.push_back(f);
    }
    const bool last = layer + 1 == cfg.layout.size();
    if (!last && f.hp % 2 == 0 && f.wp % 2 == 0) {
      auto [pooled, map] = pool_indices(f);
      auto [next_plan, next_basis] = downsample_plan(plan, basis, map);
      f = std::move(pooled);
      plan = std::move(next_plan);
      basis = std::move(next_basis);
    }
    if (trace && !last) trace->layer_plans.push_back(plan);
  }

  const std::size_t C = f.channels;
  std::vector<double> g(C, 0.0);
  for (std::size_t i = 0; i < f.tokens(); ++i) {
    const auto x = f.token(i);
    for (std::size_t c = 0; c < C; ++c) g[c] += x[c];
  }
  for (double& v : g) v /= static_cast<double>(f.tokens());

  std::vector<double> scores(cfg.num_classes);
  detail::affine(g, w.head_proj, w.head_bias, cfg.num_classes, scores);
  if (trace) {
    trace->sts = std::move(sts);
    trace->pooled = g;
  }
  return scores;
}

}  // namespace svmamba
