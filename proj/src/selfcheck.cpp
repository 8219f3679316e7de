#include "utr/selfcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <sstream>

#include <unistd.h>

#include "utr/checkpoint.hpp"
#include "utr/config.hpp"
#include "utr/generator.hpp"
#include "utr/losses.hpp"
#include "utr/optimizer.hpp"
#include "utr/swin.hpp"
#include "utr/tsp.hpp"

namespace utr::selfcheck {

namespace {

using Clock = std::chrono::steady_clock;

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

Var random_leaf(Rng& rng, Shape shape, double stddev = 1.0) {
  Var v = parameter(rng.normal_tensor(std::move(shape), stddev));
  return v;
}

// sum(x * r) for a fixed random r: a scalar whose gradient reaches every
// element of x with a distinct weight.
Var probe(const Var& x, const Tensor& r) { return ops::sum(ops::mul(x, constant(r))); }

std::vector<Var> leaves_of(const ParamSet& params) {
  std::vector<Var> out;
  for (const auto& p : params.items()) out.push_back(p.var);
  return out;
}

template <typename F>
GroupResult timed(const char* name, F&& body) {
  GroupResult g;
  g.group = name;
  const auto t0 = Clock::now();
  try {
    body(g);
  } catch (const std::exception& e) {
    g.add("unexpected exception", false, e.what());
  }
  g.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return g;
}

// Shifted-window stage used by several checks: 2 heads, 8 channels, M = 2.
SwinStageConfig tiny_stage() {
  SwinStageConfig s;
  s.depth = 2;
  s.num_heads = 2;
  s.channels = 8;
  s.window = 2;
  s.mlp_ratio = 4;
  return s;
}

BackboneConfig tiny_backbone() {
  BackboneConfig c;
  c.patch_size = 2;
  c.embed_dim = 8;
  c.window = 2;
  c.mlp_ratio = 2;
  c.depths = {2, 2};
  c.heads = {2, 2};
  return c;
}

std::filesystem::path scratch_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("utr_selfcheck_" + std::to_string(::getpid()) + "_" + tag);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

bool GroupResult::pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
}

void GroupResult::add(std::string name, bool ok, std::string detail) {
  checks.push_back(CheckResult{std::move(name), ok, std::move(detail)});
}

double gradcheck(const std::function<Var()>& loss, const std::vector<Var>& leaves, Rng& rng, std::int64_t max_coords,
                 double h, double floor) {
  for (const auto& l : leaves) {
    if (!l.requires_grad()) throw std::invalid_argument("gradcheck: leaf does not require grad");
    Var v = l;
    v.zero_grad();
  }
  backward(loss());
  std::vector<Tensor> analytic;
  double global2 = 0.0;
  for (const auto& l : leaves) {
    analytic.push_back(l.grad());
    for (double v : analytic.back().storage()) global2 += v * v;
  }
  // Leaves whose gradient is structurally ~0 (e.g. key biases under softmax)
  // are judged against a small fraction of the overall gradient scale.
  const double scale_floor = std::max(floor, 1e-3 * std::sqrt(global2));

  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Var leaf = leaves[li];
    const std::int64_t n = leaf.numel();
    std::vector<std::int64_t> coords(static_cast<std::size_t>(n));
    std::iota(coords.begin(), coords.end(), 0);
    if (n > max_coords) {
      for (std::int64_t i = 0; i < max_coords; ++i) {
        const std::int64_t j = rng.uniform_int(i, n - 1);
        std::swap(coords[static_cast<std::size_t>(i)], coords[static_cast<std::size_t>(j)]);
      }
      coords.resize(static_cast<std::size_t>(max_coords));
    }
    double diff2 = 0.0, ana2 = 0.0, num2 = 0.0;
    for (const std::int64_t i : coords) {
      double& x = leaf.mutable_value()[i];
      const double orig = x;
      x = orig + h;
      const double fp = loss().value().item();
      x = orig - h;
      const double fm = loss().value().item();
      x = orig;
      const double num = (fp - fm) / (2.0 * h);
      const double a = analytic[li][i];
      diff2 += (a - num) * (a - num);
      ana2 += a * a;
      num2 += num * num;
    }
    const double denom = std::max({std::sqrt(ana2), std::sqrt(num2), scale_floor});
    worst = std::max(worst, std::sqrt(diff2) / denom);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// References

std::vector<std::int64_t> relative_index_enumerated(std::int64_t window) {
  const std::int64_t m = window;
  std::map<std::pair<std::int64_t, std::int64_t>, std::int64_t> slot;
  std::int64_t next = 0;
  for (std::int64_t dy = -(m - 1); dy <= m - 1; ++dy)
    for (std::int64_t dx = -(m - 1); dx <= m - 1; ++dx) slot[{dy, dx}] = next++;
  std::vector<std::int64_t> out;
  for (std::int64_t qy = 0; qy < m; ++qy)
    for (std::int64_t qx = 0; qx < m; ++qx)
      for (std::int64_t ky = 0; ky < m; ++ky)
        for (std::int64_t kx = 0; kx < m; ++kx) out.push_back(slot.at({qy - ky, qx - kx}));
  return out;
}

double idmrf_bruteforce(const Tensor& fake, const Tensor& real, double bandwidth, double eps) {
  const std::int64_t b = fake.dim(0), hh = fake.dim(1), ww = fake.dim(2), c = fake.dim(3);
  const std::int64_t n = hh * ww;
  double total = 0.0;
  for (std::int64_t s = 0; s < b; ++s) {
    auto feature = [&](const Tensor& t, std::int64_t site, std::int64_t ch) {
      return t.at(s, site / ww, site % ww, ch);
    };
    auto cosine = [&](std::int64_t v, std::int64_t r) {
      double dot = 0.0, nv = 0.0, nr = 0.0;
      for (std::int64_t k = 0; k < c; ++k) {
        const double a = feature(fake, v, k), q = feature(real, r, k);
        dot += a * q;
        nv += a * a;
        nr += q * q;
      }
      return dot / (std::sqrt(nv + eps * eps) * std::sqrt(nr + eps * eps));
    };
    std::vector<std::vector<double>> rs_bar(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n)));
    for (std::int64_t v = 0; v < n; ++v) {
      double mx = -1e300;
      for (std::int64_t r = 0; r < n; ++r) mx = std::max(mx, cosine(v, r));
      double z = 0.0;
      for (std::int64_t r = 0; r < n; ++r) {
        const double rs = std::exp(cosine(v, r) / (mx + eps) / bandwidth);
        rs_bar[static_cast<std::size_t>(v)][static_cast<std::size_t>(r)] = rs;
        z += rs;
      }
      for (std::int64_t r = 0; r < n; ++r) rs_bar[static_cast<std::size_t>(v)][static_cast<std::size_t>(r)] /= z;
    }
    double acc = 0.0;
    for (std::int64_t r = 0; r < n; ++r) {
      double best = -1e300;
      for (std::int64_t v = 0; v < n; ++v) best = std::max(best, rs_bar[static_cast<std::size_t>(v)][static_cast<std::size_t>(r)]);
      acc += best;
    }
    total += -std::log(acc / static_cast<double>(n));
  }
  return total / static_cast<double>(b);
}

std::pair<double, double> ralsgan_reference(const std::vector<double>& real, const std::vector<double>& fake) {
  double mr = 0.0, mf = 0.0;
  for (double v : real) mr += v;
  for (double v : fake) mf += v;
  mr /= static_cast<double>(real.size());
  mf /= static_cast<double>(fake.size());
  double d1 = 0.0, d2 = 0.0, g1 = 0.0, g2 = 0.0;
  for (double v : real) {
    d1 += (v - mf - 1.0) * (v - mf - 1.0);
    g2 += (v - mf + 1.0) * (v - mf + 1.0);
  }
  for (double v : fake) {
    d2 += (v - mr + 1.0) * (v - mr + 1.0);
    g1 += (v - mr - 1.0) * (v - mr - 1.0);
  }
  const auto nr = static_cast<double>(real.size()), nf = static_cast<double>(fake.size());
  return {d1 / nr + d2 / nf, g1 / nf + g2 / nr};
}

double psnr_two_pass(const Tensor& a, const Tensor& b) {
  std::vector<double> diff(static_cast<std::size_t>(a.numel()));
  for (std::int64_t i = 0; i < a.numel(); ++i) diff[static_cast<std::size_t>(i)] = a[i] - b[i];
  double mse = 0.0;
  for (double d : diff) mse += d * d;
  mse /= static_cast<double>(diff.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

double ssim_direct(const Tensor& a, const Tensor& b, const SsimSettings& s) {
  const Shape sh = a.rank() == 4 ? Shape{a.dim(1), a.dim(2), a.dim(3)} : a.shape();
  const std::int64_t h = sh[0], w = sh[1], ch = sh[2], n = s.window;
  std::vector<double> g2(static_cast<std::size_t>(n * n));
  double z = 0.0;
  const double c = (n - 1) / 2.0;
  for (std::int64_t u = 0; u < n; ++u)
    for (std::int64_t v = 0; v < n; ++v) {
      const double r2 = (u - c) * (u - c) + (v - c) * (v - c);
      g2[static_cast<std::size_t>(u * n + v)] = std::exp(-r2 / (2.0 * s.sigma * s.sigma));
      z += g2[static_cast<std::size_t>(u * n + v)];
    }
  for (double& v : g2) v /= z;
  const double c1 = s.k1 * s.k1, c2 = s.k2 * s.k2;
  double total = 0.0;
  std::int64_t count = 0;
  for (std::int64_t k = 0; k < ch; ++k)
    for (std::int64_t y = 0; y + n <= h; ++y)
      for (std::int64_t x = 0; x + n <= w; ++x) {
        double ma = 0.0, mb = 0.0;
        for (std::int64_t u = 0; u < n; ++u)
          for (std::int64_t v = 0; v < n; ++v) {
            const double wt = g2[static_cast<std::size_t>(u * n + v)];
            ma += wt * a[((y + u) * w + x + v) * ch + k];
            mb += wt * b[((y + u) * w + x + v) * ch + k];
          }
        double va = 0.0, vb = 0.0, cov = 0.0;
        for (std::int64_t u = 0; u < n; ++u)
          for (std::int64_t v = 0; v < n; ++v) {
            const double wt = g2[static_cast<std::size_t>(u * n + v)];
            const double da = a[((y + u) * w + x + v) * ch + k] - ma;
            const double db = b[((y + u) * w + x + v) * ch + k] - mb;
            va += wt * da * da;
            vb += wt * db * db;
            cov += wt * da * db;
          }
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
  return total / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Gradient suite

GroupResult gradient_suite(int seeds, double tolerance) {
  return timed("gradients", [&](GroupResult& g) {
    std::map<std::string, double> worst;
    auto record = [&](const std::string& name, double err) { worst[name] = std::max(worst[name], err); };

    for (int seed = 0; seed < seeds; ++seed) {
      Rng rng(1000 + static_cast<std::uint64_t>(seed));

      {  // masked, biased multi-head attention; group 3 has no valid key
        Var q = random_leaf(rng, {4, 3, 4}), k = random_leaf(rng, {4, 5, 4}), v = random_leaf(rng, {4, 5, 3});
        Var bias = random_leaf(rng, {2, 3, 5}, 0.5);
        auto valid = std::make_shared<std::vector<std::uint8_t>>(std::vector<std::uint8_t>{1, 0, 1, 1, 0, 0, 0, 0, 0, 0});
        const Tensor r = rng.normal_tensor({4, 3, 3}, 1.0);
        record("attention", gradcheck([&] { return probe(ops::attention(q, k, v, bias, 2, ops::AttentionMask{valid}), r); },
                                      {q, k, v, bias}, rng));
      }
      {  // W-MSA + SW-MSA pair on a grid that needs padding
        const SwinStageConfig st = tiny_stage();
        ParamSet ps;
        auto b0 = make_swin_block(ps, "b0", st, rng);
        auto b1 = make_swin_block(ps, "b1", st, rng);
        // Non-trivial norms and bias tables so every path carries gradient.
        for (const auto& p : ps.items()) {
          Var var = p.var;
          for (std::int64_t i = 0; i < var.numel(); ++i) var.mutable_value()[i] += rng.normal(0.0, 0.1);
        }
        Var x = random_leaf(rng, {1, 3, 5, 8});
        const Tensor r = rng.normal_tensor({1, 3, 5, 8}, 1.0);
        auto leaves = leaves_of(ps);
        leaves.push_back(x);
        record("swin_block_pair", gradcheck([&] { return probe(swin_block_pair(x, st, b0, b1), r); }, leaves, rng, 24));
      }
      {  // patch merge and expand
        ParamSet ps;
        Linear reduce = make_linear(ps, "merge", 16, 8, rng, 0.3);
        Linear expand = make_linear(ps, "expand", 8, 16, rng, 0.3);
        Var x = random_leaf(rng, {1, 4, 4, 4});
        Var y = random_leaf(rng, {1, 2, 2, 8});
        const Tensor r1 = rng.normal_tensor({1, 2, 2, 8}, 1.0), r2 = rng.normal_tensor({1, 4, 4, 4}, 1.0);
        record("patch_merge", gradcheck([&] { return probe(patch_merge(x, reduce), r1); }, {x, reduce.weight, reduce.bias}, rng));
        record("patch_expand",
               gradcheck([&] { return probe(patch_expand(y, expand), r2); }, {y, expand.weight, expand.bias}, rng));
      }
      {  // skip fusion on the center block
        Var fe = random_leaf(rng, {2, 4, 5, 3}), fd = random_leaf(rng, {2, 4, 5, 3});
        const Region center{1, 1, 2, 3};
        const Tensor r = rng.normal_tensor({2, 4, 5, 3}, 1.0);
        record("skip_fuse", gradcheck([&] { return probe(skip_fuse(fe, fd, center), r); }, {fe, fd}, rng));
      }
      {  // TSP extension through two autoregressive steps
        ParamSet ps;
        Lstm lstm = make_lstm(ps, "lstm", 4, 4, 2, rng);
        Linear out = make_linear(ps, "out", 4, 4, rng, 0.3);
        for (const auto& p : ps.items()) {
          Var var = p.var;
          for (std::int64_t i = 0; i < var.numel(); ++i) var.mutable_value()[i] += rng.normal(0.0, 0.2);
        }
        Var bars = random_leaf(rng, {3, 4, 4});
        const Tensor r1 = rng.normal_tensor({3, 2, 4}, 1.0), r2 = rng.normal_tensor({3, 2, 4}, 1.0);
        auto leaves = leaves_of(ps);
        leaves.push_back(bars);
        record("tsp_extend", gradcheck(
                                 [&] {
                                   auto [before, after] = extend_bar(bars, 2, lstm, out);
                                   return ops::add(probe(before, r1), probe(after, r2));
                                 },
                                 leaves, rng));
      }
      {  // TSP regulation with a partly missing context
        ParamSet ps;
        MultiHeadAttention attn = make_mha(ps, "reg", 4, 2, rng);
        for (const auto& p : ps.items()) {
          Var var = p.var;
          for (std::int64_t i = 0; i < var.numel(); ++i) var.mutable_value()[i] += rng.normal(0.0, 0.3);
        }
        Var fresh = random_leaf(rng, {3, 2, 4}), context = random_leaf(rng, {3, 6, 4});
        auto valid = std::make_shared<std::vector<std::uint8_t>>(18, 1);
        for (int i = 0; i < 3; ++i) (*valid)[static_cast<std::size_t>(6 * 2 + i)] = 0;
        const Tensor r = rng.normal_tensor({3, 2, 4}, 1.0);
        auto leaves = leaves_of(ps);
        leaves.push_back(fresh);
        leaves.push_back(context);
        record("tsp_regulate", gradcheck([&] { return probe(regulate_bar(fresh, context, attn, valid), r); }, leaves, rng));
      }
      {  // the four loss terms
        Var gt = random_leaf(rng, {2, 4, 4, 3}), pred = random_leaf(rng, {2, 4, 4, 3});
        record("loss_pixel_rec", gradcheck([&] { return pixel_rec_loss(gt, pred); }, {gt, pred}, rng));
        Var fc = random_leaf(rng, {1, 2, 2, 6}), ec = random_leaf(rng, {1, 2, 2, 6});
        record("loss_feat_rec", gradcheck([&] { return feat_rec_loss(fc, ec); }, {fc, ec}, rng));

        const MrfSettings mrf;
        Var ff = random_leaf(rng, {2, 3, 3, 5}), fr = random_leaf(rng, {2, 3, 3, 5});
        record("loss_idmrf_features", gradcheck([&] { return idmrf_feature_loss(ff, fr, mrf); }, {ff, fr}, rng));
        static const FeatureExtractor extractor = FeatureExtractor::make_default(7);
        Var fake = parameter(rng.uniform_tensor({1, 16, 16, 3}, -1.0, 1.0));
        const Var real = constant(rng.uniform_tensor({1, 16, 16, 3}, -1.0, 1.0));
        record("loss_idmrf_image", gradcheck([&] { return idmrf_loss(fake, real, extractor, mrf); }, {fake}, rng, 48));

        Var sr = random_leaf(rng, {4}), sf = random_leaf(rng, {4});
        record("loss_ralsgan_d", gradcheck([&] { return ralsgan_losses(sr, sf).discriminator; }, {sr, sf}, rng));
        record("loss_ralsgan_g", gradcheck([&] { return ralsgan_losses(sr, sf).generator; }, {sr, sf}, rng));
      }
    }
    for (const auto& [name, err] : worst) {
      g.add(name, err <= tolerance, "max rel err " + fmt("%.3e", err) + " over " + std::to_string(seeds) + " seeds");
    }
  });
}

// ---------------------------------------------------------------------------
// Algebraic oracles

GroupResult algebraic_oracles() {
  return timed("algebraic oracles", [](GroupResult& g) {
    for (std::int64_t m : {1, 2, 3, 7}) {
      const auto got = relative_position_index(m);
      const auto want = relative_index_enumerated(m);
      const std::int64_t slots = (2 * m - 1) * (2 * m - 1);
      std::vector<int> used(static_cast<std::size_t>(slots), 0);
      bool in_range = true;
      for (auto v : got) {
        in_range = in_range && v >= 0 && v < slots;
        if (v >= 0 && v < slots) used[static_cast<std::size_t>(v)] = 1;
      }
      const bool all_used = std::all_of(used.begin(), used.end(), [](int u) { return u == 1; });
      g.add("relative index M=" + std::to_string(m), got == want && in_range && all_used,
            std::to_string(got.size()) + " pairs, " + std::to_string(slots) + " slots");

      Rng rng(static_cast<std::uint64_t>(m));
      const std::int64_t heads = 3, t = m * m;
      Var table = constant(rng.normal_tensor({heads, slots}, 1.0));
      const Tensor bias = relative_position_bias(table, m).value();
      bool match = true;
      for (std::int64_t h = 0; h < heads; ++h)
        for (std::int64_t i = 0; i < t; ++i)
          for (std::int64_t j = 0; j < t; ++j)
            match = match && bias[(h * t + i) * t + j] == table.value()[h * slots + want[static_cast<std::size_t>(i * t + j)]];
      g.add("bias expansion M=" + std::to_string(m), match);
    }

    const MrfSettings mrf;
    double worst = 0.0;
    for (int seed = 0; seed < 6; ++seed) {
      Rng rng(50 + static_cast<std::uint64_t>(seed));
      const std::int64_t hh = 2 + seed % 7, ww = 8 - seed % 5;
      const Tensor f = rng.normal_tensor({2, hh, ww, 6}, 1.0);
      const Tensor r = rng.normal_tensor({2, hh, ww, 6}, 1.0);
      NoGradGuard ng;
      worst = std::max(worst, std::abs(idmrf_feature_loss(constant(f), constant(r), mrf).value().item() -
                                       idmrf_bruteforce(f, r, mrf.bandwidth, mrf.epsilon)));
      worst = std::max(worst, std::abs(idmrf_feature_loss(constant(f), constant(f), mrf).value().item() -
                                       idmrf_bruteforce(f, f, mrf.bandwidth, mrf.epsilon)));
    }
    g.add("idmrf vs double loop", worst <= 1e-6, "max abs diff " + fmt("%.3e", worst));
    {
      Rng rng(77);
      const Tensor f = rng.normal_tensor({1, 1, 1, 5}, 1.0), r = rng.normal_tensor({1, 1, 1, 5}, 1.0);
      NoGradGuard ng;
      const double single = idmrf_feature_loss(constant(f), constant(r), mrf).value().item();
      g.add("idmrf single patch is zero", std::abs(single) <= 1e-12, fmt("%.3e", single));
      const Tensor a = rng.normal_tensor({1, 4, 4, 5}, 1.0), b = rng.normal_tensor({1, 4, 4, 5}, 1.0);
      Tensor a3 = a, b3 = b;
      for (auto& v : a3.storage()) v *= 3.0;
      for (auto& v : b3.storage()) v *= 3.0;
      const double base = idmrf_feature_loss(constant(a), constant(b), mrf).value().item();
      const double scaled = idmrf_feature_loss(constant(a3), constant(b3), mrf).value().item();
      g.add("idmrf scale invariance", std::abs(base - scaled) <= 1e-6, fmt("%.3e", std::abs(base - scaled)));
      const Tensor zero({1, 3, 3, 4}, 0.0);
      const double z = idmrf_feature_loss(constant(zero), constant(zero), mrf).value().item();
      g.add("idmrf all-zero features finite", std::isfinite(z), fmt("%.6g", z));
    }

    {
      NoGradGuard ng;
      auto run = [](std::vector<double> r, std::vector<double> f) {
        auto l = ralsgan_losses(constant(Tensor(Shape{static_cast<std::int64_t>(r.size())}, r)),
                                constant(Tensor(Shape{static_cast<std::int64_t>(f.size())}, f)));
        return std::make_pair(l.discriminator.value().item(), l.generator.value().item());
      };
      const auto [d1, g1] = run({1.0}, {0.0});
      g.add("ralsgan (1,0) -> L_D=0, L_G=8", d1 == 0.0 && g1 == 8.0, fmt("L_D=%.17g", d1) + fmt(" L_G=%.17g", g1));
      const auto [d2, g2] = run({0.3, 0.3}, {0.3, 0.3});
      g.add("ralsgan equal scores -> 2, 2", d2 == 2.0 && g2 == 2.0, fmt("L_D=%.17g", d2) + fmt(" L_G=%.17g", g2));
      Rng rng(3);
      double err = 0.0;
      for (int i = 0; i < 10; ++i) {
        std::vector<double> r(5), f(5);
        for (auto& v : r) v = rng.normal();
        for (auto& v : f) v = rng.normal();
        const auto [d, gg] = run(r, f);
        const auto [dr, gr] = ralsgan_reference(r, f);
        err = std::max({err, std::abs(d - dr), std::abs(gg - gr)});
      }
      g.add("ralsgan vs termwise reference", err <= 1e-12, fmt("%.3e", err));
    }

    {
      NoGradGuard ng;
      const LossWeights w;  // 20, 1, 0.5, 1
      Rng rng(11);
      bool exact = true;
      for (int i = 0; i < 20; ++i) {
        const double r = rng.uniform(), f = rng.uniform(), m = rng.uniform(0, 5), a = rng.uniform(0, 3);
        GeneratorLossParts parts{constant(Tensor::scalar(r)), constant(Tensor::scalar(f)), constant(Tensor::scalar(m)),
                                 constant(Tensor::scalar(a))};
        const double total = total_generator_loss(parts, w).value().item();
        exact = exact && total == 20.0 * r + 1.0 * f + 0.5 * m + 1.0 * a;
      }
      g.add("weighted total recombines exactly (20, 1, 0.5, 1)", exact && w.rec == 20.0 && w.feat_rec == 1.0 &&
                                                                     w.mrf == 0.5 && w.adv == 1.0);
    }
  });
}

// ---------------------------------------------------------------------------
// Metrics

GroupResult metric_oracles(int pairs, double tolerance) {
  return timed("metrics", [&](GroupResult& g) {
    Rng rng(2024);
    double psnr_err = 0.0, ssim_err = 0.0, sym = 0.0;
    for (int i = 0; i < pairs; ++i) {
      const std::int64_t h = 11 + rng.uniform_int(0, 13), w = 11 + rng.uniform_int(0, 13);
      const Tensor a = rng.uniform_tensor({h, w, 3}, 0.0, 1.0);
      Tensor b = a;
      const double amp = rng.uniform(0.01, 0.5);
      for (auto& v : b.storage()) v = std::clamp(v + rng.normal(0.0, amp), 0.0, 1.0);
      psnr_err = std::max(psnr_err, std::abs(psnr(a, b) - psnr_two_pass(a, b)));
      ssim_err = std::max(ssim_err, std::abs(ssim(a, b) - ssim_direct(a, b)));
      sym = std::max({sym, std::abs(psnr(a, b) - psnr(b, a)), std::abs(ssim(a, b) - ssim(b, a))});
    }
    g.add("psnr vs two-pass reference", psnr_err <= tolerance, fmt("max diff %.3e dB", psnr_err));
    g.add("ssim vs direct window reference", ssim_err <= tolerance, fmt("max diff %.3e", ssim_err));
    g.add("symmetry", sym <= 1e-9, fmt("%.3e", sym));

    const Tensor x = rng.uniform_tensor({32, 32, 3}, 0.0, 1.0);
    g.add("ssim(x, x) = 1", std::abs(ssim(x, x) - 1.0) <= 1e-9, fmt("%.17g", ssim(x, x)));
    g.add("identical psnr is +inf, reported as cap", std::isinf(psnr(x, x)) && psnr_for_report(psnr(x, x)) == kPsnrCap);

    Tensor shifted = x;
    for (auto& v : shifted.storage()) v = std::clamp(v + 0.1, 0.0, 1.0);
    Tensor flat_a({16, 16, 3}, 0.5), flat_b({16, 16, 3}, 0.5);
    for (std::int64_t i = 0; i < flat_b.numel(); ++i) flat_b[i] = (i % 2 == 0) ? 0.4 : 0.6;
    const double db = psnr(flat_a, flat_b);  // MSE = 0.01
    g.add("MSE 0.01 -> 20 dB", std::abs(db - 20.0) <= 1e-9, fmt("%.12f", db));
    g.add("constant images equal -> ssim 1", std::abs(ssim(flat_a, flat_a) - 1.0) <= 1e-12);

    Tensor mid({24, 24, 3});
    for (std::int64_t y = 0; y < 24; ++y)
      for (std::int64_t xx = 0; xx < 24; ++xx)
        for (std::int64_t c = 0; c < 3; ++c) mid[(y * 24 + xx) * 3 + c] = 0.5 + 0.25 * std::sin(0.7 * y + 0.3 * xx + c);
    Tensor inv = mid;
    for (auto& v : inv.storage()) v = 1.0 - v;
    g.add("ssim(x, 1 - x) < 0.5", ssim(mid, inv) < 0.5, fmt("%.6f", ssim(mid, inv)));

    bool mono = true;
    double prev = std::numeric_limits<double>::infinity();
    const Tensor noise = rng.normal_tensor({24, 24, 3}, 1.0);
    for (double amp : {0.01, 0.02, 0.05, 0.1, 0.2}) {
      Tensor y = mid;
      for (std::int64_t i = 0; i < y.numel(); ++i) y[i] += amp * noise[i];
      const double p = psnr(mid, y);
      mono = mono && p < prev;
      prev = p;
    }
    g.add("psnr decreases with noise amplitude", mono);

    bool too_small = false;
    try {
      ssim(Tensor({10, 30, 3}), Tensor({10, 30, 3}));
    } catch (const ShapeError&) {
      too_small = true;
    }
    g.add("ssim rejects images below the window", too_small);
  });
}

// ---------------------------------------------------------------------------
// Structural invariants

GroupResult geometry_invariants() {
  return timed("geometry", [](GroupResult& g) {
    Rng rng(5);
    bool identity = true, mask_count = true;
    for (int i = 0; i < 200; ++i) {
      const std::int64_t d = std::int64_t{1} << rng.uniform_int(0, 4);
      OutpaintGeometry geom{d * rng.uniform_int(1, 8), d * rng.uniform_int(1, 8), d * rng.uniform_int(0, 4), d};
      geom.validate();
      const FeatureGrid fg = feature_grid(geom);
      identity = identity && fg.grid_h == fg.center_h + 2 * fg.ring && fg.grid_w == fg.center_w + 2 * fg.ring;
      const MaskedSample s = make_masked_input(Tensor({1, geom.full_h(), geom.full_w(), 3}, 0.5), geom);
      const auto ones = std::count(s.mask.begin(), s.mask.end(), std::uint8_t{1});
      mask_count = mask_count && ones == geom.full_h() * geom.full_w() - geom.h * geom.w;
    }
    g.add("grid = center + 2 ring (200 random geometries)", identity);
    g.add("mask covers exactly the ring", mask_count);

    const FeatureGrid full = feature_grid(OutpaintGeometry{128, 128, 32, 32});
    g.add("128/32 at downsample 32 -> 6x6 grid, 4x4 center, ring 1",
          full.grid_h == 6 && full.grid_w == 6 && full.center_h == 4 && full.ring == 1);
    bool rejected = false;
    try {
      OutpaintGeometry{128, 128, 30, 32}.validate();
    } catch (const GeometryError&) {
      rejected = true;
    }
    g.add("margin not divisible by downsample is rejected", rejected);
  });
}

GroupResult window_invariants() {
  return timed("windows", [](GroupResult& g) {
    Rng rng(9);
    bool roundtrip = true, cover = true;
    for (int i = 0; i < 40; ++i) {
      const std::int64_t m = rng.uniform_int(1, 5), h = rng.uniform_int(1, 11), w = rng.uniform_int(1, 11);
      for (std::int64_t shift : {std::int64_t{0}, m / 2}) {
        const Tensor x = rng.normal_tensor({2, h, w, 3}, 1.0);
        const Windows win = window_partition(constant(x), m, shift);
        const Tensor back = window_reverse(win).value();
        roundtrip = roundtrip && back.storage() == x.storage();
        std::vector<int> seen(static_cast<std::size_t>(h * w), 0);
        for (auto t : win.layout->token)
          if (t >= 0) ++seen[static_cast<std::size_t>(t)];
        cover = cover && std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; });
      }
    }
    g.add("partition then reverse is the identity", roundtrip);
    g.add("every token lands in exactly one window slot", cover);

    // Shifted attention must not mix tokens across the padded border: a
    // change at one token may only reach tokens sharing its window.
    const SwinStageConfig st = tiny_stage();
    ParamSet ps;
    auto blk = make_swin_block(ps, "b", st, rng);
    const Tensor x = rng.normal_tensor({1, 5, 5, 8}, 1.0);
    Tensor x2 = x;
    x2.at(0, 0, 0, 0) += 1.0;
    NoGradGuard ng;
    const Tensor y1 = window_msa(constant(x), blk, st, 1).value();
    const Tensor y2 = window_msa(constant(x2), blk, st, 1).value();
    const WindowLayout lay = window_layout(5, 5, 2, 1);
    bool local = true;
    for (std::int64_t yy = 0; yy < 5; ++yy)
      for (std::int64_t xx = 0; xx < 5; ++xx) {
        bool same_window = false;
        for (std::int64_t wi = 0; wi < lay.num_windows(); ++wi) {
          bool has_origin = false, has_here = false;
          for (std::int64_t s = 0; s < 4; ++s) {
            const auto t = lay.token[static_cast<std::size_t>(wi * 4 + s)];
            has_origin = has_origin || t == 0;
            has_here = has_here || t == yy * 5 + xx;
          }
          same_window = same_window || (has_origin && has_here);
        }
        if (same_window) continue;
        for (std::int64_t c = 0; c < 8; ++c) local = local && y1.at(0, yy, xx, c) == y2.at(0, yy, xx, c);
      }
    g.add("shifted window attention stays inside windows", local);
  });
}

GroupResult tsp_invariants() {
  return timed("tsp", [](GroupResult& g) {
    Rng rng(21);
    const Tensor f = rng.normal_tensor({2, 4, 5, 6}, 1.0);
    bool ident = true;
    for (auto o : {BarOrientation::Row, BarOrientation::Column}) {
      const FeatureBars bars = decompose_bars(constant(f), o);
      ident = ident && assemble_bars(bars).value().storage() == f.storage();
    }
    g.add("decompose then assemble is the identity", ident);
    const FeatureBars rows = decompose_bars(constant(Tensor({1, 4, 4, 3})), BarOrientation::Row);
    g.add("4x4 map -> 4 row bars of length 4", rows.count == 4 && rows.length == 4);

    ParamSet ps;
    TspParams tsp = make_tsp(ps, 6, 2, rng);
    NoGradGuard ng;
    const Tensor bars = rng.normal_tensor({5, 4, 6}, 1.0);
    const std::vector<std::int64_t> perm{3, 0, 4, 1, 2};
    Tensor permuted({5, 4, 6});
    for (std::int64_t i = 0; i < 5; ++i)
      std::copy_n(bars.data().begin() + perm[static_cast<std::size_t>(i)] * 24, 24, permuted.data().begin() + i * 24);
    auto [b1, a1] = extend_bar(constant(bars), 2, tsp.lstm_h, tsp.out_proj);
    auto [b2, a2] = extend_bar(constant(permuted), 2, tsp.lstm_h, tsp.out_proj);
    bool equivariant = true;
    for (std::int64_t i = 0; i < 5; ++i)
      for (std::int64_t k = 0; k < 12; ++k) {
        const std::int64_t src = perm[static_cast<std::size_t>(i)] * 12 + k;
        equivariant = equivariant && b2.value()[i * 12 + k] == b1.value()[src] && a2.value()[i * 12 + k] == a1.value()[src];
      }
    g.add("bar permutation commutes with extension", equivariant);

    auto [b0, a0] = extend_bar(constant(bars), 0, tsp.lstm_h, tsp.out_proj);
    g.add("zero steps gives empty extensions", b0.numel() == 0 && a0.numel() == 0);

    const Var center = constant(rng.normal_tensor({1, 4, 4, 6}, 1.0));
    const Tensor grown = tsp_forward(center, 1, 1, tsp).value();
    const Tensor normed = tsp.final_norm(center).value();
    bool pass_through = grown.dim(1) == 6 && grown.dim(2) == 6;
    for (std::int64_t y = 0; pass_through && y < 4; ++y)
      for (std::int64_t x = 0; x < 4; ++x)
        for (std::int64_t c = 0; c < 6; ++c) pass_through = pass_through && grown.at(0, y + 1, x + 1, c) == normed.at(0, y, x, c);
    g.add("4x4 center, k=1, s=1 -> 6x6 with normalized pass-through center", pass_through);
    const Tensor two = tsp_forward(center, 2, 2, tsp).value();
    g.add("k=2, s=2 -> 12x12", two.dim(1) == 12 && two.dim(2) == 12);
  });
}

GroupResult model_invariants() {
  return timed("model", [](GroupResult& g) {
    const BackboneConfig cfg = tiny_backbone();
    Rng rng(31);
    GeneratorParams gen = make_generator(cfg, rng);
    const OutpaintGeometry geom{8, 8, 4, cfg.downsample()};
    const Tensor img = rng.uniform_tensor({2, 16, 16, 3}, -1.0, 1.0);
    Tensor masked = img;
    for (std::int64_t n = 0; n < 2; ++n)
      for (std::int64_t y = 0; y < 16; ++y)
        for (std::int64_t x = 0; x < 16; ++x)
          if (!center_region(geom, 1).contains(y, x))
            for (std::int64_t c = 0; c < 3; ++c) masked.at(n, y, x, c) = 0.0;
    GeneratorOutput out = generator_forward(gen, cfg, constant(masked), geom, 1);
    const Tensor r = rng.normal_tensor(out.image.shape(), 1.0);
    const Tensor rc = rng.normal_tensor(out.f_center.shape(), 1.0);
    backward(ops::add(probe(out.image, r), ops::add(probe(out.f_center, rc), probe(out.center_features, rc))));
    std::string dead;
    for (const auto& p : gen.params.items()) {
      const Tensor grad = p.var.grad();
      const bool any = std::any_of(grad.storage().begin(), grad.storage().end(), [](double v) { return v != 0.0; });
      if (!any) dead += (dead.empty() ? "" : ", ") + p.name;
    }
    g.add("every generator parameter receives gradient", dead.empty(), dead.empty() ? "" : "dead: " + dead);
    bool bounded = true;
    for (double v : out.image.value().storage()) bounded = bounded && v > -1.0 && v < 1.0;
    g.add("output lies in (-1, 1)", bounded);

    NoGradGuard ng;
    const Tensor center = rng.uniform_tensor({1, 8, 8, 3}, -1.0, 1.0);
    const Tensor k1 = outpaint(gen, cfg, center, geom, 1, 0.0, false);
    const Tensor k2 = outpaint(gen, cfg, center, geom, 2, 0.0, true);
    g.add("K=1 -> h+2m, K=2 -> h+4m", k1.dim(1) == 16 && k1.dim(2) == 16 && k2.dim(1) == 24 && k2.dim(2) == 24);
    bool kept = true;
    for (std::int64_t y = 0; y < 8; ++y)
      for (std::int64_t x = 0; x < 8; ++x)
        for (std::int64_t c = 0; c < 3; ++c) kept = kept && k2.at(0, y + 8, x + 8, c) == center.at(0, y, x, c);
    g.add("keep-center restores the input block", kept);

    const auto enc_big = encoder_forward(constant(rng.uniform_tensor({1, 16, 16, 3}, -1, 1)), gen.encoder, cfg);
    const auto enc_small = encoder_forward(constant(rng.uniform_tensor({1, 8, 8, 3}, -1, 1)), gen.encoder, cfg);
    g.add("encoder runs at two resolutions with shared weights",
          enc_big.back().dim(1) == 4 && enc_small.back().dim(1) == 2 && enc_big.back().dim(3) == cfg.bottleneck_channels());
  });
}

GroupResult training_invariants() {
  return timed("training", [](GroupResult& g) {
    Rng rng(41);
    ParamSet ps;
    make_linear(ps, "lin", 3, 4, rng);
    const auto before = ps.snapshot();
    Adam adam(ps, AdamSettings{});
    for (int i = 0; i < 3; ++i) {
      for (const auto& p : ps.items()) {
        Var v = p.var;
        v.zero_grad();
        v.node()->grad_buffer();  // explicit zero gradient
      }
      adam.step();
    }
    g.add("adam with zero gradients leaves parameters unchanged", ps.snapshot().at("lin.weight").storage() ==
                                                                     before.at("lin.weight").storage());

    const BackboneConfig cfg = tiny_backbone();
    Rng r1(3);
    GeneratorParams gen = make_generator(cfg, r1);
    Checkpoint ck;
    ck.config_text = "check";
    ck.meta["step"] = "12";
    for (const auto& [name, t] : gen.params.snapshot()) ck.tensors.emplace(name, t);
    const auto dir = scratch_dir("ckpt");
    const std::string path = (dir / "roundtrip.utck").string();
    write_checkpoint(path, ck);
    const Checkpoint back = read_checkpoint(path);
    Rng r2(99);
    GeneratorParams other = make_generator(cfg, r2);
    other.params.restore(back.tensors);
    const OutpaintGeometry geom{8, 8, 4, cfg.downsample()};
    const Tensor center = rng.uniform_tensor({1, 8, 8, 3}, -1, 1);
    const Tensor y1 = outpaint(gen, cfg, center, geom, 1, 0.0, false);
    const Tensor y2 = outpaint(other, cfg, center, geom, 1, 0.0, false);
    g.add("checkpoint roundtrip gives bit-identical forward", y1.storage() == y2.storage() && back.meta.at("step") == "12");

    {
      std::filesystem::resize_file(path, std::filesystem::file_size(path) - 7);
      bool caught = false;
      try {
        read_checkpoint(path);
      } catch (const CheckpointError&) {
        caught = true;
      }
      g.add("truncated checkpoint is rejected", caught);
    }
    std::filesystem::remove_all(dir);
  });
}

std::vector<GroupResult> run_all(int gradient_seeds) {
  std::vector<GroupResult> out;
  out.push_back(geometry_invariants());
  out.push_back(window_invariants());
  out.push_back(tsp_invariants());
  out.push_back(model_invariants());
  out.push_back(training_invariants());
  out.push_back(algebraic_oracles());
  out.push_back(metric_oracles());
  out.push_back(gradient_suite(gradient_seeds));
  return out;
}

void print_table(std::ostream& os, const std::vector<GroupResult>& groups, bool verbose) {
  char line[256];
  std::snprintf(line, sizeof(line), "%-22s %7s %7s %9s\n", "group", "checks", "result", "seconds");
  os << line;
  for (const auto& g : groups) {
    std::snprintf(line, sizeof(line), "%-22s %7zu %7s %9.2f\n", g.group.c_str(), g.checks.size(),
                  g.pass() ? "PASS" : "FAIL", g.seconds);
    os << line;
    for (const auto& c : g.checks) {
      if (!verbose && c.pass) continue;
      os << "    " << (c.pass ? "ok   " : "FAIL ") << c.name;
      if (!c.detail.empty()) os << " (" << c.detail << ")";
      os << "\n";
    }
  }
}

bool run_selftest(std::ostream& os) {
  const auto groups = run_all();
  print_table(os, groups, true);
  return std::all_of(groups.begin(), groups.end(), [](const GroupResult& g) { return g.pass(); });
}

}  // namespace utr::selfcheck
