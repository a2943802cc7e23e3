// Command-line front end: traverse, check-invariance, eig, bench, plus the
// synth/weights/forward helpers used to prepare inputs.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "svmamba/commands.hpp"

namespace {

using namespace svmamba;

struct Overrides {
  std::string config_path;
  std::optional<std::size_t> m, k;
  std::optional<std::string> merge, zoh;
  std::uint64_t seed = 1;
  bool parallel = false;
  std::string weights;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "model config (key=value lines)");
    app->add_option("--m", m, "eigenvector count");
    app->add_option("--k", k, "kNN neighbour count");
    app->add_option("--merge", merge, "merge mode")->check(CLI::IsMember({"concat_proj", "sum", "mean"}));
    app->add_option("--zoh", zoh, "discretization")->check(CLI::IsMember({"approx", "exact"}));
    app->add_option("--seed", seed, "seed for randomized checks and synthetic inputs");
    app->add_option("--weights", weights, "SVW1 weight file (default: seeded generator)");
    app->add_flag("--parallel", parallel, "run RFN branches and per-sequence scans concurrently");
  }

  CommandOptions resolve() const {
    CommandOptions o;
    if (!config_path.empty()) o.cfg = load_config(config_path);
    if (m) o.cfg.m = *m;
    if (k) o.cfg.k = *k;
    if (merge) o.cfg.merge = parse_merge_mode(*merge);
    if (zoh) o.cfg.zoh = parse_zoh_mode(*zoh);
    o.cfg.validate();
    o.weights_path = weights;
    o.parallel = parallel;
    o.seed = seed;
    return o;
  }
};

int emit(const RunReport& rep) {
  std::fputs(rep.serialize().c_str(), stdout);
  return report_status(rep);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spectral traversal, selective-scan forward pass and verification tools"};
  app.require_subcommand(1);

  Overrides ov;
  std::string image, out;

  auto* traverse = app.add_subcommand("traverse", "write rank maps and the plan dump for an image");
  traverse->add_option("--image", image, "input P6 image")->required();
  traverse->add_option("--out", out, "output prefix")->required();
  ov.attach(traverse);

  auto* check = app.add_subcommand("check-invariance", "verify rotation and relabeling invariance");
  check->add_option("--image", image, "input P6 image (square)")->required();
  ov.attach(check);

  std::string source;
  EigCommandOptions eig_opt;
  auto* eig = app.add_subcommand("eig", "compare Lanczos with the dense oracle");
  eig->add_option("source", source, "triplet file or fixture (p3, path<N>, grid<R>x<C>, diag<N>, two-component, two-cluster)")
      ->required();
  eig->add_option("--m", eig_opt.m, "eigenpair count");
  eig->add_flag("--adjacency", eig_opt.adjacency, "triplet file holds W; solve its normalized Laplacian");

  auto* bench = app.add_subcommand("bench", "STS cost sweep over 49..3136 tokens");
  ov.attach(bench);

  std::string kind = "scene";
  std::size_t size = 56, hp = 14, wp = 14, patch = 4;
  double gap = 0.5;
  auto* synth = app.add_subcommand("synth", "write a synthetic P6 fixture");
  synth->add_option("--kind", kind, "scene or two-cluster")->check(CLI::IsMember({"scene", "two-cluster"}));
  synth->add_option("--out", out, "output image path")->required();
  synth->add_option("--size", size, "scene side in pixels");
  synth->add_option("--hp", hp, "two-cluster patch rows");
  synth->add_option("--wp", wp, "two-cluster patch columns");
  synth->add_option("--patch", patch, "two-cluster patch side");
  synth->add_option("--gap", gap, "two-cluster intensity gap");
  synth->add_option("--seed", ov.seed, "generator seed");

  auto* weights = app.add_subcommand("weights", "write the seeded weights as an SVW1 file");
  weights->add_option("--out", out, "output weight file")->required();
  weights->add_option("--config", ov.config_path, "model config");

  auto* forward = app.add_subcommand("forward", "print class scores for an image");
  forward->add_option("--image", image, "input P6 image")->required();
  ov.attach(forward);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*traverse) return emit(cmd_traverse(image, ov.resolve(), out));
    if (*check) return emit(cmd_check_invariance(image, ov.resolve()));
    if (*eig) return emit(cmd_eig(source, eig_opt));
    if (*bench) return emit(cmd_bench(ov.resolve()));
    if (*synth) {
      const ImageTensor img = kind == "scene" ? synth_scene(size, size, ov.seed)
                                              : synth_two_cluster(hp, wp, patch, gap, ov.seed);
      save_ppm(out, img);
      return 0;
    }
    if (*weights) {
      const CommandOptions o = ov.resolve();
      const auto bytes = save_weights(generate_weights(o.cfg));
      write_file_bytes(out, bytes);
      return 0;
    }
    if (*forward) {
      const CommandOptions o = ov.resolve();
      const auto scores = network_forward(load_ppm(image), resolve_weights(o), o.cfg, {o.parallel});
      std::string text;
      for (std::size_t c = 0; c < scores.size(); ++c) text += "score." + std::to_string(c) + "=" + format_double(scores[c]) + "\n";
      std::fputs(text.c_str(), stdout);
      return 0;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "svmamba: %s\n", e.what());
    return error_status(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "svmamba: %s\n", e.what());
    return 2;
  }
  return 2;
}
