#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "svmamba/fixtures.hpp"
#include "svmamba/report.hpp"
#include "svmamba/tensor_io.hpp"
#include "test_support.hpp"

using namespace svmamba;
namespace fs = std::filesystem;

namespace {

test::CommandResult cli(const std::string& args) {
  return test::run_command(std::string(SVMAMBA_CLI_PATH) + " " + args + " 2>/dev/null");
}

bool has_line(const std::string& text, const std::string& line) {
  return text.find(line + "\n") != std::string::npos;
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = test::scratch_dir("cli");
    ASSERT_EQ(cli("synth --kind scene --seed 3 --out " + path("scene.ppm")).status, 0);
    ASSERT_EQ(cli("synth --kind two-cluster --hp 14 --wp 14 --patch 4 --gap 0.5 --seed 7 --out " +
                  path("two_cluster.ppm"))
                  .status,
              0);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }
  static std::string path(const std::string& name) { return (dir_ / name).string(); }

  static inline fs::path dir_;
};

}  // namespace

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(cli("").status, 2);
  EXPECT_EQ(cli("frobnicate").status, 2);
  EXPECT_EQ(cli("traverse --out x").status, 2);
  EXPECT_EQ(cli("traverse --image " + path("scene.ppm") + " --out " + path("x") + " --merge max").status, 2);
  EXPECT_EQ(cli("traverse --image /nonexistent.ppm --out " + path("x")).status, 2);
  EXPECT_EQ(cli("traverse --image " + path("scene.ppm") + " --out " + path("x") + " --m 500").status, 2);
  std::ofstream(path("bad.cfg")) << "colour=3\n";
  EXPECT_EQ(cli("check-invariance --image " + path("scene.ppm") + " --config " + path("bad.cfg")).status, 2);
  EXPECT_EQ(cli("eig grid0x3").status, 2);
}

TEST_F(CliTest, SingleTokenImageIsDegenerate) {
  ASSERT_EQ(cli("synth --kind scene --size 4 --out " + path("tiny.ppm")).status, 0);
  EXPECT_EQ(cli("traverse --image " + path("tiny.ppm") + " --out " + path("tiny")).status, 3);
}

TEST_F(CliTest, TraverseWritesPlanImagesAndReport) {
  const auto r = cli("traverse --image " + path("scene.ppm") + " --out " + path("scene"));
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_TRUE(has_line(r.out, "command=traverse"));
  EXPECT_TRUE(has_line(r.out, "check.plan_bijective=pass"));
  EXPECT_TRUE(has_line(r.out, "status=pass"));
  EXPECT_EQ(test::slurp(path("scene_report.txt")), r.out);
  const auto dump = test::slurp(path("scene_plan.txt"));
  EXPECT_EQ(std::count(dump.begin(), dump.end(), '\n'), 8);
  EXPECT_EQ(dump.rfind("order 0 asc:", 0), 0u);
  for (int t = 0; t < 8; ++t) {
    const auto img = load_ppm(path("scene_order" + std::to_string(t) + ".ppm"));
    EXPECT_EQ(img.height, 56u);
  }
}

TEST_F(CliTest, OutputsAreByteIdenticalAcrossRuns) {
  const auto a = cli("traverse --image " + path("scene.ppm") + " --out " + path("run_a"));
  const auto b = cli("traverse --image " + path("scene.ppm") + " --out " + path("run_b") + " --parallel");
  ASSERT_EQ(a.status, 0);
  ASSERT_EQ(b.status, 0);
  EXPECT_EQ(test::slurp(path("run_a_plan.txt")), test::slurp(path("run_b_plan.txt")));
  for (int t = 0; t < 8; ++t) {
    const std::string suffix = "_order" + std::to_string(t) + ".ppm";
    EXPECT_EQ(test::slurp(path("run_a" + suffix)), test::slurp(path("run_b" + suffix)));
  }
  const auto strip = [](const std::string& s) {
    std::string out = strip_timings(s);
    // the parallel flag is echoed in the config block
    std::string filtered;
    std::size_t pos = 0;
    while (pos < out.size()) {
      const auto end = out.find('\n', pos);
      const std::string line = out.substr(pos, end - pos + 1);
      if (line.rfind("config.parallel=", 0) != 0) filtered += line;
      pos = end + 1;
    }
    return filtered;
  };
  EXPECT_EQ(strip(a.out), strip(b.out));
  const auto c = cli("check-invariance --image " + path("scene.ppm"));
  const auto d = cli("check-invariance --image " + path("scene.ppm"));
  EXPECT_EQ(strip_timings(c.out), strip_timings(d.out));
}

TEST_F(CliTest, TwoClusterRankMapSeparatesHalves) {
  const auto r = cli("traverse --image " + path("two_cluster.ppm") + " --out " + path("tc") + " --m 2");
  ASSERT_EQ(r.status, 0) << r.out;
  bool separated = false;
  for (int t : {0, 2}) {
    const auto img = load_ppm(path("tc_order" + std::to_string(t) + ".ppm"));
    float left_max = 0, left_min = 1, right_max = 0, right_min = 1;
    for (std::size_t i = 0; i < img.height; ++i)
      for (std::size_t j = 0; j < img.width; ++j) {
        const float v = img.at(i, j, 0);
        if (j < img.width / 2) left_max = std::max(left_max, v), left_min = std::min(left_min, v);
        else right_max = std::max(right_max, v), right_min = std::min(right_min, v);
      }
    separated = separated || left_max < right_min || right_max < left_min;
  }
  EXPECT_TRUE(separated);
}

TEST_F(CliTest, CheckInvariancePassesOnGenericScene) {
  const auto r = cli("check-invariance --image " + path("scene.ppm"));
  EXPECT_EQ(r.status, 0) << r.out;
  for (const char* c : {"rfn_equivariance", "content_order_rotation", "spectrum_rotation", "score_agreement",
                        "content_order_permutation", "spectrum_permutation"})
    EXPECT_TRUE(has_line(r.out, std::string("check.") + c + "=pass")) << c;
}

TEST_F(CliTest, RemovingRotationsFailsInvariance) {
  std::ofstream(path("t0.cfg")) << "turns=0\n";
  const auto r = cli("check-invariance --image " + path("scene.ppm") + " --config " + path("t0.cfg"));
  EXPECT_EQ(r.status, 1);
  EXPECT_TRUE(has_line(r.out, "check.rfn_equivariance=fail"));
  EXPECT_TRUE(has_line(r.out, "check.score_agreement=fail"));
  EXPECT_TRUE(has_line(r.out, "status=fail"));
}

TEST_F(CliTest, SymmetricImageDemotesToSubspaceChecks) {
  // constant image: every token has the same features and the spectrum is degenerate
  const ImageTensor flat = ImageTensor::from_data(56, 56, 3, std::vector<float>(56 * 56 * 3, 0.5f));
  save_ppm(path("flat.ppm"), flat);
  const auto r = cli("check-invariance --image " + path("flat.ppm"));
  EXPECT_NE(r.out.find("warning=duplicate token features"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("check.subspace_rotation="), std::string::npos);
  EXPECT_TRUE(has_line(r.out, "check.subspace_permutation=pass"));
  EXPECT_TRUE(has_line(r.out, "check.spectrum_permutation=pass"));
  EXPECT_EQ(r.out.find("check.content_order_rotation"), std::string::npos);
}

TEST_F(CliTest, EigFixtures) {
  const auto p3 = cli("eig p3 --m 3");
  EXPECT_EQ(p3.status, 0) << p3.out;
  EXPECT_TRUE(has_line(p3.out, "check.eigenvector_alignment=pass"));
  const auto comp = cli("eig two-component");
  EXPECT_EQ(comp.status, 0);
  EXPECT_TRUE(has_line(comp.out, "metric.near_zero_eigenvalues=2"));
  EXPECT_NE(comp.out.find("connected components"), std::string::npos);
  for (const char* name : {"path10", "grid14x14", "two-cluster", "diag20"}) EXPECT_EQ(cli(std::string("eig ") + name).status, 0) << name;
}

TEST_F(CliTest, EigReadsTripletFiles) {
  const auto text = to_triplet_text(grid_adjacency(4, 5));
  std::ofstream(path("grid.tri")) << text;
  const auto r = cli("eig " + path("grid.tri") + " --adjacency");
  EXPECT_EQ(r.status, 0) << r.out;
  EXPECT_TRUE(has_line(r.out, "metric.n=20"));
  std::ofstream(path("lap.tri")) << to_triplet_text(normalized_laplacian(grid_adjacency(4, 5)));
  EXPECT_EQ(cli("eig " + path("lap.tri")).status, 0);
  std::ofstream(path("broken.tri")) << "0 1 x\n";
  EXPECT_EQ(cli("eig " + path("broken.tri")).status, 2);
}

TEST_F(CliTest, BenchPassesBudgets) {
  const auto r = cli("bench");
  EXPECT_EQ(r.status, 0) << r.out;
  EXPECT_TRUE(has_line(r.out, "check.nnz_bound=pass"));
  EXPECT_TRUE(has_line(r.out, "check.memory_near_linear=pass"));
  EXPECT_TRUE(has_line(r.out, "check.sts_flops_budget=pass"));
  EXPECT_NE(r.out.find("timing."), std::string::npos);
  EXPECT_EQ(strip_timings(r.out).find("timing."), std::string::npos);
}

TEST_F(CliTest, WeightFileMatchesGenerator) {
  ASSERT_EQ(cli("weights --out " + path("w.svw")).status, 0);
  const auto generated = cli("forward --image " + path("scene.ppm"));
  const auto loaded = cli("forward --image " + path("scene.ppm") + " --weights " + path("w.svw"));
  ASSERT_EQ(generated.status, 0);
  EXPECT_EQ(generated.out, loaded.out);
  EXPECT_EQ(generated.out.rfind("score.0=", 0), 0u);
  EXPECT_EQ(std::count(generated.out.begin(), generated.out.end(), '\n'), 10);
  std::ofstream(path("junk.svw")) << "not weights";
  EXPECT_EQ(cli("forward --image " + path("scene.ppm") + " --weights " + path("junk.svw")).status, 2);
}
