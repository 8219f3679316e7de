#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include "utr/image_io.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("utr_cli_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(UTR_CLI_PATH) + " " + args + " > " + (work_dir() / "stdout.txt").string() +
                          " 2> " + (work_dir() / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string path(const std::string& name) { return (work_dir() / name).string(); }

void write_config(const std::string& name, const std::string& extra) {
  std::ofstream out(path(name));
  out << "geometry: {center_height: 8, center_width: 8, margin: 4}\n"
         "model: {patch_size: 2, embed_dim: 8, window: 2, mlp_ratio: 2, depths: [2, 2], heads: [2, 2]}\n"
         "discriminator: {base_channels: 4, layers: 3}\n"
      << extra;
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(run("") == 2);
  CHECK(run("--help") == 0);
  CHECK(run("frobnicate") == 2);
  CHECK(run("train --config /nonexistent.yaml --data x --out y") == 2);
  CHECK(run("gen-synthetic --out " + path("bad") + " --count 0") == 2);
  CHECK(run("outpaint --ckpt /nonexistent.utck --input x --out y") == 2);
}

TEST_CASE("end-to-end: synthesize, train, outpaint, eval") {
  REQUIRE(run("gen-synthetic --out " + path("data") + " --count 4 --size 16 --seed 3") == 0);
  CHECK(fs::exists(path("data/synthetic_00003.png")));

  write_config("bad.yaml", "train: {batch_size: -1}\n");
  CHECK(run("train --config " + path("bad.yaml") + " --data " + path("data") + " --out " + path("run")) == 2);
  CHECK(slurp(path("stderr.txt")).find("batch_size") != std::string::npos);

  write_config("tiny.yaml", "train: {batch_size: 2, steps: 2, checkpoint_interval: 0}\n");
  REQUIRE(run("train --config " + path("tiny.yaml") + " --data " + path("data") + " --out " + path("run") +
              " --seed 11") == 0);
  const std::string ckpt = path("run/final.utck");
  REQUIRE(fs::exists(ckpt));
  CHECK(fs::exists(path("run/losses.csv")));

  // A center-sized input: crop 8x8 from a 16x16 sample.
  utr::Image8 full = utr::read_image(path("data/synthetic_00000.png"));
  utr::Image8 center;
  center.width = center.height = 8;
  for (int y = 4; y < 12; ++y)
    for (int x = 4; x < 12; ++x)
      for (int c = 0; c < 3; ++c) center.rgb.push_back(full.rgb[static_cast<std::size_t>((y * 16 + x) * 3 + c)]);
  utr::write_png(path("center.png"), center);

  CHECK(run("outpaint --ckpt " + ckpt + " --input " + path("center.png") + " --out " + path("k1.png")) == 0);
  CHECK(utr::read_image(path("k1.png")).width == 16);
  CHECK(run("outpaint --ckpt " + ckpt + " --input " + path("center.png") + " --steps 2 --keep-center --out " +
            path("k2.png")) == 0);
  const utr::Image8 k2 = utr::read_image(path("k2.png"));
  CHECK(k2.width == 24);
  CHECK(k2.rgb[static_cast<std::size_t>((8 * 24 + 8) * 3)] == center.rgb[0]);
  CHECK(run("outpaint --ckpt " + ckpt + " --input " + path("data/synthetic_00000.png") + " --out " + path("x.png")) == 2);
  CHECK(run("outpaint --ckpt " + ckpt + " --input " + path("center.png") + " --steps 0 --out " + path("x.png")) == 2);

  REQUIRE(run("eval --ckpt " + ckpt + " --data " + path("data") + " --report " + path("report.csv")) == 0);
  const std::string report = slurp(path("report.csv"));
  CHECK(report.rfind("filename,psnr_full,psnr_ring,ssim_full,ssim_ring\n", 0) == 0);
  CHECK(report.find("\nmean,") != std::string::npos);
  CHECK(slurp(path("stdout.txt")).find("FID: N/A") != std::string::npos);
}

TEST_CASE("a diverging run exits with 3") {
  if (!fs::exists(path("data"))) REQUIRE(run("gen-synthetic --out " + path("data") + " --count 4 --size 16") == 0);
  write_config("diverge.yaml",
               "optimizer: {lr_generator: 1.0e39}\ntrain: {batch_size: 2, steps: 3, checkpoint_interval: 0}\n");
  CHECK(run("train --config " + path("diverge.yaml") + " --data " + path("data") + " --out " + path("div")) == 3);
  CHECK(slurp(path("stderr.txt")).find("non-finite") != std::string::npos);
}
