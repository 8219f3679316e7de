#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "utr/autograd.hpp"
#include "utr/metrics.hpp"
#include "utr/rng.hpp"

namespace utr::selfcheck {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct GroupResult {
  std::string group;
  std::vector<CheckResult> checks;
  double seconds = 0.0;

  bool pass() const;
  void add(std::string name, bool ok, std::string detail = {});
};

// ---------------------------------------------------------------------------
// Finite differences

/// Compares reverse-mode gradients of the scalar `loss` with central
/// differences. Every leaf must require grad; up to `max_coords` coordinates
/// per leaf are probed (all of them for small leaves). Returns the largest
/// per-leaf error ||analytic - numeric|| / max(||analytic||, ||numeric||, f),
/// where f is the larger of `floor` and 1e-3 times the norm of the full
/// analytic gradient across all leaves.
double gradcheck(const std::function<Var()>& loss, const std::vector<Var>& leaves, Rng& rng,
                 std::int64_t max_coords = 48, double h = 1e-5, double floor = 1e-6);

// ---------------------------------------------------------------------------
// Independent reference implementations

/// Offset -> table slot by enumerating all (dy, dx) offsets in row-major order.
std::vector<std::int64_t> relative_index_enumerated(std::int64_t window);

/// ID-MRF over (B, H, W, C) feature maps with plain loops.
double idmrf_bruteforce(const Tensor& fake, const Tensor& real, double bandwidth, double eps);

/// RaLSGAN losses computed term by term.
std::pair<double, double> ralsgan_reference(const std::vector<double>& real, const std::vector<double>& fake);

/// MSE from an explicit difference image, then 10 log10(1 / MSE).
double psnr_two_pass(const Tensor& a, const Tensor& b);

/// SSIM with an explicit 2-D Gaussian window at every position.
double ssim_direct(const Tensor& a, const Tensor& b, const SsimSettings& s = {});

// ---------------------------------------------------------------------------
// Suites

GroupResult gradient_suite(int seeds, double tolerance = 1e-4);
GroupResult algebraic_oracles();
GroupResult metric_oracles(int pairs = 20, double tolerance = 1e-6);
GroupResult geometry_invariants();
GroupResult window_invariants();
GroupResult tsp_invariants();
GroupResult model_invariants();
GroupResult training_invariants();

std::vector<GroupResult> run_all(int gradient_seeds = 10);
void print_table(std::ostream& os, const std::vector<GroupResult>& groups, bool verbose = false);
/// Runs every suite, prints the table and returns true when all pass.
bool run_selftest(std::ostream& os);

}  // namespace utr::selfcheck
