// End-to-end checks of the command-line tool, driven through a subprocess.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <atomic>
#include <cstdlib>
#include <string>

#include "a2rnet/config.hpp"
#include "a2rnet/image_io.hpp"
#include "a2rnet/labels.hpp"
#include "support/synthetic.hpp"
#include "support/test_util.hpp"

using namespace a2r;
using a2r::testing::require_bitwise_equal;
using a2r::testing::ScratchDir;
using a2r::testing::slurp;
using a2r::testing::write_synthetic_dataset;

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
};

CliResult run_cli(const ScratchDir& scratch, const std::string& args) {
  static std::atomic<int> counter{0};
  const std::string cap = scratch.path("capture" + std::to_string(counter++) + ".txt");
  const std::string cmd = std::string(A2R_CLI_BINARY) + " " + args + " > " + cap + " 2>&1";
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  return {WIFEXITED(rc) ? WEXITSTATUS(rc) : -1, slurp(cap)};
}

// Dataset plus a config that trains a small model quickly.
struct Fixture {
  ScratchDir scratch;
  std::string data_dir;
  std::string config_path;

  Fixture() {
    data_dir = scratch.path("data");
    write_synthetic_dataset(data_dir, 5, 3, 32, 32);
    config_path = scratch.path("run.ini");
    std::ofstream cfg(config_path);
    cfg << "[network]\nbase_channels = 8\n"
        << "[train]\nepochs = 1\nbatch = 2\nseed = 11\n"
        << "[budget]\niterations = 2\n"
        << "[label]\nmode = analytic_max\n"
        << "[paths]\nmanifest = " << data_dir << "/manifest.txt\n";
  }

  std::string out(const std::string& name) const { return scratch.path(name); }
};

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("train writes artifacts, provenance, and is replayable") {
  Fixture fx;
  const CliResult first =
      run_cli(fx.scratch, "train --config " + fx.config_path + " --out " + fx.out("t1"));
  CAPTURE(first.out);
  REQUIRE(first.code == 0);
  CHECK(fs::exists(fx.out("t1") + "/checkpoint.bin"));
  CHECK(fs::exists(fx.out("t1") + "/train_log.csv"));
  CHECK(fs::exists(fx.out("t1") + "/resolved_config.ini"));
  const std::string produced = slurp(fx.out("t1") + "/produced_files.txt");
  CHECK(produced.find("resolved_config.ini\n") != std::string::npos);
  CHECK(produced.find("checkpoint.bin\n") != std::string::npos);
  CHECK(produced.find("train_log.csv\n") != std::string::npos);

  // Same config, fresh directory: bit-identical checkpoint.
  const CliResult second =
      run_cli(fx.scratch, "train --config " + fx.config_path + " --out " + fx.out("t2"));
  REQUIRE(second.code == 0);
  CHECK(slurp(fx.out("t1") + "/checkpoint.bin") == slurp(fx.out("t2") + "/checkpoint.bin"));

  // The resolved config replays the run it came from.
  const CliResult replay = run_cli(
      fx.scratch,
      "train --config " + fx.out("t1") + "/resolved_config.ini --out " + fx.out("t3"));
  REQUIRE(replay.code == 0);
  CHECK(slurp(fx.out("t1") + "/checkpoint.bin") == slurp(fx.out("t3") + "/checkpoint.bin"));

  // The dedicated seed flag changes the outcome.
  const CliResult other = run_cli(fx.scratch, "train --config " + fx.config_path +
                                                  " --seed 12 --out " + fx.out("t4"));
  REQUIRE(other.code == 0);
  CHECK(slurp(fx.out("t1") + "/checkpoint.bin") != slurp(fx.out("t4") + "/checkpoint.bin"));
}

TEST_CASE("fuse and zero-budget attack produce identical fused images") {
  Fixture fx;
  REQUIRE(run_cli(fx.scratch,
                  "train --config " + fx.config_path + " --out " + fx.out("model"))
              .code == 0);
  const std::string ckpt = " --override paths.checkpoint=" + fx.out("model") +
                           "/checkpoint.bin";

  const CliResult fuse = run_cli(
      fx.scratch, "fuse --config " + fx.config_path + ckpt + " --out " + fx.out("fuse"));
  CAPTURE(fuse.out);
  REQUIRE(fuse.code == 0);

  const CliResult attack =
      run_cli(fx.scratch, "attack --config " + fx.config_path + ckpt +
                              " --override budget.epsilon=0 --out " + fx.out("atk"));
  CAPTURE(attack.out);
  REQUIRE(attack.code == 0);

  for (int i = 0; i < 3; ++i) {
    const std::string id = "s" + std::to_string(i);
    CAPTURE(id);
    // Fused outputs agree byte for byte; the perturbed inputs are the originals.
    CHECK(slurp(fx.out("fuse") + "/fused/" + id + ".pgm") ==
          slurp(fx.out("atk") + "/fused/" + id + "_attacked.pgm"));
    CHECK(slurp(fx.data_dir + "/" + id + "_ir.pgm") ==
          slurp(fx.out("atk") + "/adv/" + id + "_ir.pgm"));
    CHECK(slurp(fx.data_dir + "/" + id + "_vis.pgm") ==
          slurp(fx.out("atk") + "/adv/" + id + "_vis.pgm"));
    // Header plus one loss row per iteration plus the starting point.
    CHECK(count_lines(slurp(fx.out("atk") + "/traces/" + id + ".csv")) == 1 + 2 + 1);
  }

  // The attack run pinned its iteration count into the resolved config.
  const RunConfig resolved = load_run_config(fx.out("atk") + "/resolved_config.ini");
  CHECK(resolved.train.budget.iterations == 2);
  CHECK(resolved.budget_iterations_explicit);
}

TEST_CASE("evaluate emits a deterministic report") {
  Fixture fx;
  REQUIRE(run_cli(fx.scratch,
                  "train --config " + fx.config_path + " --out " + fx.out("model"))
              .code == 0);
  const std::string ckpt = " --override paths.checkpoint=" + fx.out("model") +
                           "/checkpoint.bin";
  const CliResult e1 = run_cli(fx.scratch, "evaluate --config " + fx.config_path + ckpt +
                                               " --out " + fx.out("ev1"));
  CAPTURE(e1.out);
  REQUIRE(e1.code == 0);
  const std::string report = slurp(fx.out("ev1") + "/report.csv");
  CHECK(count_lines(report) == 1 + 2 * 3);  // header + clean/attacked per pair
  CHECK(fs::exists(fx.out("ev1") + "/aggregate.json"));
  CHECK(fs::exists(fx.out("ev1") + "/fused/s0_clean.pgm"));
  CHECK(fs::exists(fx.out("ev1") + "/fused/s0_attacked.pgm"));
  CHECK(fs::exists(fx.out("ev1") + "/waveforms/s0.csv"));

  const CliResult e2 = run_cli(fx.scratch, "evaluate --config " + fx.config_path + ckpt +
                                               " --out " + fx.out("ev2"));
  REQUIRE(e2.code == 0);
  CHECK(slurp(fx.out("ev2") + "/report.csv") == report);
  CHECK(slurp(fx.out("ev2") + "/aggregate.json") == slurp(fx.out("ev1") + "/aggregate.json"));
}

TEST_CASE("label-gen writes the same labels the library produces") {
  Fixture fx;
  const CliResult res = run_cli(
      fx.scratch, "label-gen --config " + fx.config_path + " --out " + fx.out("lab"));
  CAPTURE(res.out);
  REQUIRE(res.code == 0);

  const DatasetManifest manifest = load_manifest(fx.data_dir + "/manifest.txt");
  LabelRecipe recipe;
  recipe.mode = LabelRecipe::Mode::analytic_max;
  for (const ManifestEntry& entry : manifest.entries) {
    const Tensor expected = generate_label(load_pair(entry), recipe);
    const Tensor written = load_pgm(fx.out("lab") + "/labels/" + entry.id + ".pgm");
    require_bitwise_equal(written.values(), quantize_unit(expected).values());
  }
}

TEST_CASE("color visible sources fuse to both grayscale and color outputs") {
  ScratchDir scratch;
  const std::string data = scratch.path("data");
  fs::create_directories(data);
  const ImagePair pair = a2r::testing::synthetic_pair(33, 32, 32, "c0");
  save_pgm(data + "/c0_ir.pgm", pair.ir);
  Tensor cbcr = Tensor::full({1, 2, 32, 32}, 0.5);
  {
    auto v = cbcr.mutable_values();
    for (std::size_t i = 0; i < v.size() / 2; ++i) v[i] = 0.3;  // tint Cb only
  }
  recombine_to_ppm(data + "/c0_vis.ppm", pair.vis_y, cbcr);
  std::ofstream(data + "/manifest.txt") << "c0, c0_ir.pgm, c0_vis.ppm\n";

  const std::string cfg_path = scratch.path("run.ini");
  std::ofstream(cfg_path) << "[network]\nbase_channels = 8\n[train]\nepochs = 0\n"
                          << "[paths]\nmanifest = " << data << "/manifest.txt\n";
  REQUIRE(run_cli(scratch, "train --config " + cfg_path + " --out " +
                               scratch.path("model"))
              .code == 0);
  const CliResult fuse = run_cli(
      scratch, "fuse --config " + cfg_path + " --override paths.checkpoint=" +
                   scratch.path("model") + "/checkpoint.bin --out " + scratch.path("f"));
  CAPTURE(fuse.out);
  REQUIRE(fuse.code == 0);
  CHECK(fs::exists(scratch.path("f") + "/fused/c0.pgm"));
  CHECK(fs::exists(scratch.path("f") + "/fused/c0.ppm"));
  const std::string produced = slurp(scratch.path("f") + "/produced_files.txt");
  CHECK(produced.find("fused/c0.ppm\n") != std::string::npos);

  // The color output carries the fused luminance with the source chroma.
  const auto [y, chroma] = load_ppm_as_ycbcr(scratch.path("f") + "/fused/c0.ppm");
  const Tensor fused_gray = load_pgm(scratch.path("f") + "/fused/c0.pgm");
  REQUIRE(y.shape() == fused_gray.shape());
}

TEST_CASE("gradcheck runs the operator suite and reports per entry") {
  ScratchDir scratch;
  const CliResult res = run_cli(scratch, "gradcheck --out " + scratch.path("g"));
  CAPTURE(res.out);
  REQUIRE(res.code == 0);
  CHECK(res.out.find("conv2d") != std::string::npos);
  CHECK(res.out.find("network forward") != std::string::npos);
  CHECK(res.out.find("FAIL") == std::string::npos);
  CHECK(res.out.find("gradient checks passed") != std::string::npos);
  const std::string report = slurp(scratch.path("g") + "/gradcheck_report.csv");
  CHECK(report.find("name,max_rel_err,tolerance,pass") == 0);
  CHECK(fs::exists(scratch.path("g") + "/resolved_config.ini"));
}

TEST_CASE("exit codes distinguish validation from runtime failures") {
  Fixture fx;
  CHECK(run_cli(fx.scratch, "frobnicate").code == 1);
  CHECK(run_cli(fx.scratch, "train --config " + fx.config_path).code == 1);  // no --out
  CHECK(run_cli(fx.scratch, "train --config " + fx.config_path +
                                " --override no.such=1 --out " + fx.out("x1"))
            .code == 1);
  CHECK(run_cli(fx.scratch, "train --config " + fx.config_path +
                                " --override train.batch=0 --out " + fx.out("x2"))
            .code == 1);
  CHECK(run_cli(fx.scratch, "train --config " + fx.scratch.path("absent.ini") +
                                " --out " + fx.out("x3"))
            .code == 1);
  CHECK(run_cli(fx.scratch, "fuse --config " + fx.config_path +
                                " --override paths.checkpoint=" +
                                fx.scratch.path("no.bin") + " --out " + fx.out("x4"))
            .code == 2);
  CHECK(run_cli(fx.scratch, "fuse --config " + fx.config_path + " --out " + fx.out("x5"))
            .code == 1);  // checkpoint path missing entirely
}
