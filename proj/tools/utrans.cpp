// Command-line front end: train, outpaint, eval, gen-synthetic, selftest.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>

#include "utr/checkpoint.hpp"
#include "utr/config.hpp"
#include "utr/dataset.hpp"
#include "utr/generator.hpp"
#include "utr/image_io.hpp"
#include "utr/metrics.hpp"
#include "utr/selfcheck.hpp"
#include "utr/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

struct TrainArgs {
  std::string config, data, out, resume;
  bool deterministic = false;
  std::int64_t seed = -1;
};

struct OutpaintArgs {
  std::string ckpt, input, out;
  std::int64_t steps = 1;
  bool keep_center = false;
};

struct EvalArgs {
  std::string ckpt, data, report;
};

struct SyntheticArgs {
  std::string out;
  std::int64_t count = 8;
  std::int64_t size = 48;
  std::uint64_t seed = 0;
};

int cmd_train(const TrainArgs& a) {
  utr::TrainConfig cfg = utr::TrainConfig::from_file(a.config);
  if (a.deterministic) cfg.deterministic = true;
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  utr::RunOptions opts;
  opts.data_dir = a.data;
  opts.out_dir = a.out;
  opts.resume = a.resume;
  opts.log = &std::cerr;
  const utr::StepLosses last = utr::run_training(cfg, opts);
  std::cout << "finished step " << last.step << " total " << last.total << " rec " << last.rec << "\n";
  return kExitOk;
}

int cmd_outpaint(const OutpaintArgs& a) {
  if (a.steps < 1) throw CLI::ValidationError("--steps", "must be >= 1");
  const utr::LoadedGenerator lg = utr::load_generator(a.ckpt);
  const utr::OutpaintGeometry& geom = lg.config.geometry;
  const utr::Image8 img = utr::read_image(a.input);
  if (img.height != geom.h || img.width != geom.w) {
    std::cerr << "error: input is " << img.width << "x" << img.height << " but the checkpoint expects a " << geom.w
              << "x" << geom.h << " center\n";
    return kExitUsage;
  }
  const utr::Tensor center = utr::image_to_tensor(img);
  const utr::Tensor out = utr::outpaint(lg.generator, lg.config.model, center, geom, a.steps, lg.config.fill,
                                        a.keep_center);
  utr::write_png(a.out, utr::tensor_to_image(out));
  std::cout << "wrote " << a.out << " (" << out.dim(2) << "x" << out.dim(1) << ")\n";
  return kExitOk;
}

int cmd_eval(const EvalArgs& a) {
  const utr::LoadedGenerator lg = utr::load_generator(a.ckpt);
  const utr::Dataset data = utr::load_dataset(a.data, lg.config.geometry, lg.config.fill);
  std::ofstream report(a.report);
  if (!report) {
    std::cerr << "error: cannot write " << a.report << "\n";
    return kExitUsage;
  }
  report << "filename,psnr_full,psnr_ring,ssim_full,ssim_ring\n";
  double sums[4] = {0, 0, 0, 0};
  int counts[4] = {0, 0, 0, 0};
  char line[512];
  for (std::size_t i = 0; i < data.size(); ++i) {
    const utr::MaskedSample& s = data.samples[i];
    utr::Tensor pred;
    {
      utr::NoGradGuard no_grad;
      pred = utr::generator_forward(lg.generator, lg.config.model, utr::constant(s.masked_image), lg.config.geometry, 1)
                 .image.value();
    }
    const utr::Tensor p01 = utr::to_unit_range(pred), g01 = utr::to_unit_range(s.ground_truth);
    double ssim_ring = std::numeric_limits<double>::quiet_NaN();
    try {
      ssim_ring = utr::ssim_masked(p01, g01, s.mask);
    } catch (const utr::ShapeError&) {
      // Ring too thin for any SSIM window to be centered in it.
    }
    const double v[4] = {utr::psnr_for_report(utr::psnr(p01, g01)),
                         utr::psnr_for_report(utr::psnr_masked(p01, g01, s.mask)), utr::ssim(p01, g01), ssim_ring};
    for (int k = 0; k < 4; ++k) {
      if (std::isnan(v[k])) continue;
      sums[k] += v[k];
      ++counts[k];
    }
    std::snprintf(line, sizeof(line), "%s,%.6f,%.6f,%.6f,%.6f", data.names[i].c_str(), v[0], v[1], v[2], v[3]);
    report << line << "\n";
  }
  double means[4];
  for (int k = 0; k < 4; ++k) means[k] = counts[k] ? sums[k] / counts[k] : std::numeric_limits<double>::quiet_NaN();
  std::snprintf(line, sizeof(line), "mean,%.6f,%.6f,%.6f,%.6f", means[0], means[1], means[2], means[3]);
  report << line << "\n";
  std::cout << line << "\nFID: N/A\nIS: N/A\n";
  return kExitOk;
}

int cmd_gen_synthetic(const SyntheticArgs& a) {
  const auto files = utr::gen_synthetic(a.count, a.size, a.seed, a.out);
  std::cout << "wrote " << files.size() << " images to " << a.out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformer-based image outpainting: training, inference and evaluation"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train generator and discriminator");
  t->add_option("--config", train.config, "YAML config file")->required()->check(CLI::ExistingFile);
  t->add_option("--data", train.data, "Directory of PNG/JPEG training images")->required();
  t->add_option("--out", train.out, "Output directory for checkpoints and losses.csv")->required();
  t->add_option("--resume", train.resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  t->add_flag("--deterministic", train.deterministic, "Force deterministic mode");
  t->add_option("--seed", train.seed, "Override train.seed")->check(CLI::NonNegativeNumber);

  OutpaintArgs op;
  auto* o = app.add_subcommand("outpaint", "Extrapolate an image beyond its borders");
  o->add_option("--ckpt", op.ckpt, "Training checkpoint")->required()->check(CLI::ExistingFile);
  o->add_option("--input", op.input, "Center image (configured center size)")->required()->check(CLI::ExistingFile);
  o->add_option("--steps", op.steps, "Extrapolation steps K");
  o->add_option("--out", op.out, "Output PNG")->required();
  o->add_flag("--keep-center", op.keep_center, "Paste the input back into the center");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "PSNR/SSIM report over a directory");
  e->add_option("--ckpt", ev.ckpt, "Training checkpoint")->required()->check(CLI::ExistingFile);
  e->add_option("--data", ev.data, "Directory of PNG/JPEG images")->required();
  e->add_option("--report", ev.report, "Output CSV")->required();

  SyntheticArgs sy;
  auto* g = app.add_subcommand("gen-synthetic", "Write procedural training images");
  g->add_option("--out", sy.out, "Output directory")->required();
  g->add_option("--count", sy.count, "Number of images")->check(CLI::PositiveNumber);
  g->add_option("--size", sy.size, "Side length in pixels")->check(CLI::PositiveNumber);
  g->add_option("--seed", sy.seed, "Random seed");

  auto* s = app.add_subcommand("selftest", "Run the invariant and gradient suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (t->parsed()) return cmd_train(train);
    if (o->parsed()) return cmd_outpaint(op);
    if (e->parsed()) return cmd_eval(ev);
    if (g->parsed()) return cmd_gen_synthetic(sy);
    if (s->parsed()) return utr::selfcheck::run_selftest(std::cout) ? kExitOk : 1;
  } catch (const utr::TrainingError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitNumeric;
  } catch (const CLI::ValidationError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const utr::ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& err) {
    // Missing or unreadable files, bad checkpoints, shape mismatches.
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
