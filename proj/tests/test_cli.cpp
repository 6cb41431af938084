#include <filesystem>
#include <string>
#include <vector>

#include "cirnet/cli.hpp"
#include "cirnet/png_io.hpp"
#include "doctest.h"
#include "json.hpp"
#include "testutil.hpp"

namespace fs = std::filesystem;
namespace cli = cirnet::cli;

namespace {

int64_t count_files(const std::string& dir, const std::string& suffix) {
  int64_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::string name = e.path().filename().string();
    if (name.size() >= suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      ++n;
    }
  }
  return n;
}

std::string small_model_block() {
  return
      "[model]\n"
      "image_size = 32\n"
      "channels = 8,8,12,12,16\n"
      "decoder_width = 8\n"
      "reduction = 4\n"
      "pai = on\n"
      "smar = full3d\n"
      "cmwr = full\n"
      "igf = gated\n";
}

}  // namespace

TEST_CASE("help and malformed invocations use the argument exit code") {
  CHECK(cli::run({"--help"}) == 0);
  CHECK(cli::run({"frobnicate"}) == 2);
  CHECK(cli::run({"generate"}) == 2);                       // --out is required
  CHECK(cli::run({"generate", "--out", "x", "--frob"}) == 2);
  CHECK(cli::run({"infer"}) == 2);
  CHECK(cli::run({"train"}) == 2);                          // no train_dir anywhere
  CHECK(cli::run({"train", "--train-dir", "x", "--out-dir", "y", "--batch-size", "0"}) == 2);
}

TEST_CASE("configs that cannot be read or parsed split into io and config codes") {
  testutil::TempDir dir("cli_cfg");
  CHECK(cli::run({"train", "--config", dir.sub("absent.cfg")}) == 3);

  std::string bad = dir.sub("bad.cfg");
  testutil::write_text(bad, "[model]\nwhatnot = 12\n");
  CHECK(cli::run({"train", "--config", bad}) == 2);

  std::string worse = dir.sub("worse.cfg");
  testutil::write_text(worse, "[mystery]\nlr = 1\n");
  CHECK(cli::run({"train", "--config", worse}) == 2);
}

TEST_CASE("missing inputs use the io exit code") {
  testutil::TempDir dir("cli_io");
  CHECK(cli::run({"train", "--train-dir", dir.sub("nowhere"), "--out-dir", dir.sub("out")}) == 3);
  CHECK(cli::run({"infer", "--checkpoint", dir.sub("no.cirk"), "--rgb-dir", dir.str(),
                  "--depth-dir", dir.str(), "--out", dir.sub("out")}) == 3);
  CHECK(cli::run({"eval", "--pred-dir", dir.sub("nope"), "--gt-dir", dir.str(), "--out-dir",
                  dir.sub("out")}) == 3);
}

TEST_CASE("generate writes the full triple layout and reruns byte-identically") {
  testutil::TempDir dir("cli_gen");
  std::string a = dir.sub("a"), b = dir.sub("b");
  std::vector<std::string> args{"generate", "--out", a,        "--n",    "5",
                                "--size",   "32",    "--seed", "9"};
  REQUIRE(cli::run(args) == 0);
  args[2] = b;
  REQUIRE(cli::run(args) == 0);

  for (const char* sub : {"rgb", "depth", "gt"}) {
    CHECK(count_files(a + "/" + sub, ".png") == 5);
  }
  for (int i = 0; i < 5; ++i) {
    char stem[8];
    std::snprintf(stem, sizeof(stem), "%04d", i);
    std::string s(stem);
    CHECK(testutil::same_bytes(a + "/rgb/" + s + "_rgb.png", b + "/rgb/" + s + "_rgb.png"));
    CHECK(testutil::same_bytes(a + "/depth/" + s + "_depth.png", b + "/depth/" + s + "_depth.png"));
    CHECK(testutil::same_bytes(a + "/gt/" + s + "_gt.png", b + "/gt/" + s + "_gt.png"));
  }

  cirnet::io::ImageU8 img = cirnet::io::read_png(a + "/rgb/0000_rgb.png");
  CHECK(img.h == 32);
  CHECK(img.w == 32);
  CHECK(img.channels == 3);
}

TEST_CASE("generate, train, infer and eval chain into a scored report") {
  testutil::TempDir dir("cli_e2e");
  std::string ds = dir.sub("ds");
  REQUIRE(cli::run({"generate", "--out", ds, "--n", "6", "--size", "32", "--seed", "4"}) == 0);

  std::string run_dir = dir.sub("run");
  std::string cfg_path = dir.sub("train.cfg");
  testutil::write_text(cfg_path, small_model_block() +
                                     "[train]\n"
                                     "lr = 1e-3\n"
                                     "lr_decay_div = 1\n"
                                     "lr_decay_every = 1\n"
                                     "batch_size = 3\n"
                                     "epochs = 2\n"
                                     "seed = 3\n"
                                     "scales = 32\n"
                                     "flip_prob = 0.5\n"
                                     "rotate = on\n"
                                     "[paths]\n"
                                     "train_dir = " + ds + "\n"
                                     "out_dir = " + run_dir + "\n");
  REQUIRE(cli::run({"train", "--config", cfg_path, "--max-steps", "3"}) == 0);
  CHECK(fs::exists(run_dir + "/checkpoint_initial.cirk"));
  CHECK(fs::exists(run_dir + "/checkpoint_final.cirk"));
  std::string log = testutil::read_text(run_dir + "/loss.csv");
  CHECK(testutil::count_lines(log) == 4);  // header and the three capped steps
  CHECK(log.rfind("step,loss_total,loss_r,loss_d,loss_rgbd\n", 0) == 0);

  std::string maps = dir.sub("maps");
  REQUIRE(cli::run({"infer", "--checkpoint", run_dir + "/checkpoint_final.cirk", "--rgb-dir",
                    ds + "/rgb", "--depth-dir", ds + "/depth", "--out", maps}) == 0);
  CHECK(count_files(maps, "_sal.png") == 6);
  CHECK(count_files(maps, "_sal_r.png") == 6);
  CHECK(count_files(maps, "_sal_d.png") == 6);
  CHECK(count_files(maps, "_sal_rgbd.png") == 6);
  cirnet::io::ImageU8 m = cirnet::io::read_png(maps + "/0000_sal.png");
  CHECK(m.h == 32);
  CHECK(m.channels == 1);

  std::string rep_dir = dir.sub("rep");
  REQUIRE(cli::run({"eval", "--pred-dir", maps, "--gt-dir", ds + "/gt", "--out-dir", rep_dir}) ==
          0);
  nlohmann::json rep = nlohmann::json::parse(testutil::read_text(rep_dir + "/report.json"));
  CHECK(rep["count"].get<int>() == 6);
  CHECK(rep["images"].size() == 6);
  double mae = rep["mean"]["mae"].get<double>();
  CHECK(mae >= 0.0);
  CHECK(mae <= 1.0);
  CHECK(rep["mean"]["s_measure"].get<double>() <= 1.0);
  std::string curve = testutil::read_text(rep_dir + "/pr_curve.csv");
  CHECK(testutil::count_lines(curve) == 257);
  CHECK(curve.rfind("threshold,precision,recall\n", 0) == 0);
}

TEST_CASE("a zero learning rate leaves the final checkpoint at the initial bytes") {
  testutil::TempDir dir("cli_lr0");
  std::string ds = dir.sub("ds");
  REQUIRE(cli::run({"generate", "--out", ds, "--n", "4", "--size", "32", "--seed", "5"}) == 0);
  std::string run_dir = dir.sub("run");
  std::string cfg_path = dir.sub("train.cfg");
  testutil::write_text(cfg_path, small_model_block() +
                                     "[train]\n"
                                     "batch_size = 4\n"
                                     "epochs = 1\n"
                                     "scales = 32\n"
                                     "[paths]\n"
                                     "train_dir = " + ds + "\n"
                                     "out_dir = " + run_dir + "\n");
  REQUIRE(cli::run({"train", "--config", cfg_path, "--lr", "0"}) == 0);
  CHECK(testutil::same_bytes(run_dir + "/checkpoint_initial.cirk",
                             run_dir + "/checkpoint_final.cirk"));
}

TEST_CASE("the loss stop flag ends training after the crossing step") {
  testutil::TempDir dir("cli_stop");
  std::string ds = dir.sub("ds");
  REQUIRE(cli::run({"generate", "--out", ds, "--n", "4", "--size", "32", "--seed", "6"}) == 0);
  std::string run_dir = dir.sub("run");
  std::string cfg_path = dir.sub("train.cfg");
  testutil::write_text(cfg_path, small_model_block() +
                                     "[train]\n"
                                     "lr = 1e-3\n"
                                     "batch_size = 4\n"
                                     "epochs = 3\n"
                                     "scales = 32\n"
                                     "[paths]\n"
                                     "train_dir = " + ds + "\n"
                                     "out_dir = " + run_dir + "\n");
  // fresh heads answer 0.5 everywhere, so step one already lands under 10
  REQUIRE(cli::run({"train", "--config", cfg_path, "--stop-below", "10"}) == 0);
  std::string log = testutil::read_text(run_dir + "/loss.csv");
  CHECK(testutil::count_lines(log) == 2);
}

TEST_CASE("a non-finite learning rate stops with the divergence exit code") {
  // Finite rates, however large, stall instead of diverging here: saturated
  // heads and the clamped loss zero every gradient while the loss stays
  // finite. An infinite rate turns the zero encoder gradients of the first
  // step into NaN parameters, and the next forward pass trips the guard.
  testutil::TempDir dir("cli_diverge");
  std::string ds = dir.sub("ds");
  REQUIRE(cli::run({"generate", "--out", ds, "--n", "4", "--size", "16", "--seed", "8"}) == 0);
  std::string run_dir = dir.sub("run");
  std::string cfg_path = dir.sub("train.cfg");
  testutil::write_text(cfg_path,
                       "[model]\n"
                       "image_size = 16\n"
                       "channels = 4,4,6,6,8\n"
                       "decoder_width = 4\n"
                       "reduction = 2\n"
                       "[train]\n"
                       "lr = inf\n"
                       "batch_size = 4\n"
                       "epochs = 8\n"
                       "scales = 16\n"
                       "flip_prob = 0\n"
                       "rotate = off\n"
                       "[paths]\n"
                       "train_dir = " + ds + "\n"
                       "out_dir = " + run_dir + "\n");
  CHECK(cli::run({"train", "--config", cfg_path}) == 4);
}

TEST_CASE("the gradient battery exits clean normally and nonzero at absurd tolerance") {
  CHECK(cli::run({"grad-check", "--seeds", "1", "--seed", "2"}) == 0);
  CHECK(cli::run({"grad-check", "--seeds", "1", "--seed", "2", "--tol", "1e-15"}) == 5);
}
