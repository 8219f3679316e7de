// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "utr/config.hpp"
#include "utr/dataset.hpp"
#include "utr/generator.hpp"
#include "utr/image_io.hpp"
#include "utr/metrics.hpp"
#include "utr/selfcheck.hpp"
#include "utr/trainer.hpp"

using namespace utr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::string dims(const Shape& s) {
  std::string out;
  for (std::size_t i = 1; i < s.size(); ++i) out += (i > 1 ? "x" : "") + std::to_string(s[i]);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome from_group(const selfcheck::GroupResult& g) {
  Outcome o{g.pass(), std::to_string(g.checks.size()) + " checks"};
  for (const auto& c : g.checks)
    if (!c.pass) o.detail += "; failed: " + c.name + (c.detail.empty() ? "" : " (" + c.detail + ")");
  return o;
}

const fs::path& work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("utr_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// Synthetic training set shared by criteria 4-6.
const std::string& synthetic_dir() {
  static const std::string dir = [] {
    const fs::path d = work_dir() / "synthetic";
    gen_synthetic(8, 48, 1, d.string());
    return d.string();
  }();
  return dir;
}

Outcome full_shapes() {
  const TrainConfig cfg = full_config();
  Rng rng(0);
  const GeneratorParams g = make_generator(cfg.model, rng);
  const Tensor img = rng.uniform_tensor({1, 192, 192, 3}, -1, 1);
  const MaskedSample s = make_masked_input(img, cfg.geometry, cfg.fill);
  NoGradGuard ng;
  const GeneratorOutput out = generator_forward(g, cfg.model, constant(s.masked_image), cfg.geometry, 1);
  const Shape bottleneck = out.encoder_stages.back().shape(), tsp = out.tsp_map.shape(),
              image = out.image.shape(), center = out.center_features.shape();
  const bool ok = bottleneck == Shape{1, 6, 6, 768} && tsp == Shape{1, 6, 6, 768} && image == Shape{1, 192, 192, 3} &&
                  center == Shape{1, 4, 4, 768};
  return {ok, "bottleneck " + dims(bottleneck) + ", TSP map " + dims(tsp) + ", output " + dims(image) +
                  ", center path " + dims(center)};
}

struct OverfitResult {
  Outcome outcome;
  std::string checkpoint;
};

OverfitResult overfit() {
  const TrainConfig cfg = TrainConfig::from_file(UTR_SOURCE_DIR "/configs/overfit.yaml");
  RunOptions opts;
  opts.data_dir = synthetic_dir();
  opts.out_dir = (work_dir() / "overfit").string();
  opts.log = &std::cout;
  opts.log_every = 250;
  const StepLosses last = run_training(cfg, opts);

  // Final model on the whole training set.
  const std::string ckpt = opts.out_dir + "/final.utck";
  const LoadedGenerator lg = load_generator(ckpt);
  const Dataset data = load_dataset(opts.data_dir, lg.config.geometry, lg.config.fill);
  double rec = 0.0, ring = 0.0;
  for (const auto& s : data.samples) {
    NoGradGuard ng;
    const Var pred = generator_forward(lg.generator, lg.config.model, constant(s.masked_image), lg.config.geometry, 1).image;
    rec += pixel_rec_loss(constant(s.ground_truth), pred).value().item();
    ring += psnr_for_report(psnr_masked(to_unit_range(pred.value()), to_unit_range(s.ground_truth), s.mask));
  }
  rec /= static_cast<double>(data.size());
  ring /= static_cast<double>(data.size());
  const bool ok = cfg.steps <= 2000 && rec <= 0.05 && ring >= 20.0;
  return {{ok, std::to_string(cfg.steps) + " steps; L_rec " + fmt("%.4f", rec) + " (last batch " +
                   fmt("%.4f", last.rec) + "), ring PSNR " + fmt("%.2f dB", ring) + " over " +
                   std::to_string(data.size()) + " images"},
          ckpt};
}

Outcome multi_step(const std::string& toy_ckpt) {
  std::string detail;
  bool ok = true;
  if (!toy_ckpt.empty()) {
    const LoadedGenerator lg = load_generator(toy_ckpt);
    const OutpaintGeometry& g = lg.config.geometry;
    Rng rng(3);
    const Tensor center = rng.uniform_tensor({1, g.h, g.w, 3}, -1, 1);
    const Tensor k1 = outpaint(lg.generator, lg.config.model, center, g, 1, lg.config.fill, false);
    const Tensor k2 = outpaint(lg.generator, lg.config.model, center, g, 2, lg.config.fill, false);
    ok = k1.shape() == Shape{1, g.h + 2 * g.m, g.w + 2 * g.m, 3} && k2.shape() == Shape{1, g.h + 4 * g.m, g.w + 4 * g.m, 3};
    detail = "toy K=1 " + dims(k1.shape()) + ", K=2 " + dims(k2.shape());
  } else {
    ok = false;
    detail = "no trained toy checkpoint";
  }
  const TrainConfig full = full_config();
  Rng rng(4);
  const GeneratorParams g = make_generator(full.model, rng);
  const Tensor center = rng.uniform_tensor({1, 128, 128, 3}, -1, 1);
  const Tensor k1 = outpaint(g, full.model, center, full.geometry, 1, full.fill, false);
  const Tensor k2 = outpaint(g, full.model, center, full.geometry, 2, full.fill, false);
  ok = ok && k1.shape() == Shape{1, 192, 192, 3} && k2.shape() == Shape{1, 256, 256, 3};
  return {ok, detail + "; full-size K=1 " + dims(k1.shape()) + ", K=2 " + dims(k2.shape())};
}

Outcome determinism() {
  TrainConfig cfg = toy_config();
  cfg.steps = 6;
  cfg.checkpoint_interval = 3;
  RunOptions opts;
  opts.data_dir = synthetic_dir();
  opts.out_dir = (work_dir() / "det_a").string();
  run_training(cfg, opts);
  opts.out_dir = (work_dir() / "det_b").string();
  run_training(cfg, opts);
  const std::string a = slurp(work_dir() / "det_a" / "losses.csv"), b = slurp(work_dir() / "det_b" / "losses.csv");
  const bool same_csv = !a.empty() && a == b;

  fs::create_directories(work_dir() / "det_c");
  fs::copy_file(work_dir() / "det_a" / "losses.csv", work_dir() / "det_c" / "losses.csv");
  opts.out_dir = (work_dir() / "det_c").string();
  opts.resume = (work_dir() / "det_a" / "ckpt_000003.utck").string();
  run_training(cfg, opts);
  const bool same_resumed = slurp(work_dir() / "det_c" / "losses.csv") == a;

  const Dataset data = load_dataset(synthetic_dir(), cfg.geometry, cfg.fill);
  Trainer t(cfg);
  for (std::int64_t s = 0; s < 2; ++s) t.train_step(batch_for_step(data, s, cfg.batch_size, cfg.seed));
  const std::string path = (work_dir() / "persist.utck").string();
  write_checkpoint(path, t.to_checkpoint());
  const LoadedGenerator lg = load_generator(path);
  Rng rng(5);
  const Tensor center = rng.uniform_tensor({2, 32, 32, 3}, -1, 1);
  const Tensor y1 = outpaint(t.generator(), cfg.model, center, cfg.geometry, 1, cfg.fill, false);
  const Tensor y2 = outpaint(lg.generator, lg.config.model, center, cfg.geometry, 1, cfg.fill, false);
  const bool same_forward = y1.storage() == y2.storage();

  return {same_csv && same_resumed && same_forward,
          std::string("loss CSVs ") + (same_csv ? "identical" : "differ") + ", resumed CSV " +
              (same_resumed ? "identical" : "differs") + ", reloaded forward " +
              (same_forward ? "bit-identical" : "differs")};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    std::string name;
    double budget_s;  // 0 = no time limit
    std::function<Outcome()> run;
  };
  std::string toy_ckpt;
  const std::vector<Criterion> criteria = {
      {1, "full-size shapes", 120, full_shapes},
      {2, "gradient suite, 10 seeds, rel err <= 1e-4", 300,
       [] { return from_group(selfcheck::gradient_suite(10, 1e-4)); }},
      {3, "algebraic oracles", 0, [] { return from_group(selfcheck::algebraic_oracles()); }},
      {4, "toy overfit", 900,
       [&] {
         OverfitResult r = overfit();
         toy_ckpt = r.checkpoint;
         return r.outcome;
       }},
      {5, "multi-step output sizes", 0, [&] { return multi_step(toy_ckpt); }},
      {6, "determinism and persistence", 0, determinism},
      {7, "metric oracles, 20 pairs, tol 1e-6", 0, [] { return from_group(selfcheck::metric_oracles(20, 1e-6)); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0 && secs > c.budget_s) {
      o.pass = false;
      o.detail += "; over the " + fmt("%.0f s", c.budget_s) + " budget";
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s criterion %d: %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name.c_str(), o.detail.c_str(),
                secs);
    std::fflush(stdout);
  }
  fs::remove_all(work_dir());
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
