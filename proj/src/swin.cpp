#include "utr/swin.hpp"

#include <array>
#include <string>

namespace utr {

namespace {

using IndexVec = std::vector<std::int64_t>;

std::shared_ptr<IndexVec> make_index(std::size_t n) { return std::make_shared<IndexVec>(n); }

void require_rank4(const Var& x, const char* what) {
  if (x.value().rank() != 4) throw ShapeError(std::string(what) + ": expected (B, H, W, C), got " + shape_str(x.shape()));
}

}  // namespace

void SwinStageConfig::validate() const {
  if (depth < 2 || depth % 2 != 0) throw ShapeError("stage depth must be a positive even number");
  if (num_heads < 1 || channels % num_heads != 0) {
    throw ShapeError("stage channels " + std::to_string(channels) + " not divisible by heads " +
                     std::to_string(num_heads));
  }
  if (window < 1) throw ShapeError("window size must be >= 1");
}

std::vector<std::int64_t> relative_position_index(std::int64_t window) {
  const std::int64_t m = window;
  const std::int64_t t = m * m;
  const std::int64_t side = 2 * m - 1;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(t * t));
  for (std::int64_t i = 0; i < t; ++i) {
    const std::int64_t iy = i / m, ix = i % m;
    for (std::int64_t j = 0; j < t; ++j) {
      const std::int64_t dy = iy - j / m, dx = ix - j % m;
      idx[static_cast<std::size_t>(i * t + j)] = (dy + m - 1) * side + (dx + m - 1);
    }
  }
  return idx;
}

Var relative_position_bias(const Var& table, std::int64_t window) {
  const std::int64_t entries = (2 * window - 1) * (2 * window - 1);
  if (table.value().rank() != 2 || table.dim(1) != entries) {
    throw ShapeError("bias table must be (heads, " + std::to_string(entries) + "), got " + shape_str(table.shape()));
  }
  const std::int64_t heads = table.dim(0);
  const std::int64_t t = window * window;
  const auto rel = relative_position_index(window);
  auto idx = make_index(static_cast<std::size_t>(heads * t * t));
  for (std::int64_t h = 0; h < heads; ++h) {
    for (std::int64_t k = 0; k < t * t; ++k) (*idx)[static_cast<std::size_t>(h * t * t + k)] = h * entries + rel[static_cast<std::size_t>(k)];
  }
  return ops::gather(table, Shape{heads, t, t}, std::move(idx));
}

WindowLayout window_layout(std::int64_t height, std::int64_t width, std::int64_t window, std::int64_t shift) {
  if (window < 1 || shift < 0 || shift >= window) throw ShapeError("invalid window/shift");
  WindowLayout l;
  l.height = height;
  l.width = width;
  l.window = window;
  l.shift = shift;
  l.windows_y = (height + shift + window - 1) / window;
  l.windows_x = (width + shift + window - 1) / window;
  const std::int64_t t = window * window;
  l.token.assign(static_cast<std::size_t>(l.num_windows() * t), -1);
  for (std::int64_t wy = 0; wy < l.windows_y; ++wy)
    for (std::int64_t wx = 0; wx < l.windows_x; ++wx)
      for (std::int64_t ty = 0; ty < window; ++ty)
        for (std::int64_t tx = 0; tx < window; ++tx) {
          const std::int64_t y = wy * window + ty - shift;
          const std::int64_t x = wx * window + tx - shift;
          if (y < 0 || y >= height || x < 0 || x >= width) continue;
          l.token[static_cast<std::size_t>((wy * l.windows_x + wx) * t + ty * window + tx)] = y * width + x;
        }
  return l;
}

Windows window_partition(const Var& x, std::int64_t window, std::int64_t shift) {
  require_rank4(x, "window_partition");
  const std::int64_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  auto layout = std::make_shared<WindowLayout>(window_layout(h, w, window, shift));
  const std::int64_t nw = layout->num_windows(), t = window * window;
  auto idx = make_index(static_cast<std::size_t>(b * nw * t * c));
  auto valid = std::make_shared<std::vector<std::uint8_t>>(static_cast<std::size_t>(b * nw * t));
  std::size_t i = 0;
  for (std::int64_t n = 0; n < b; ++n) {
    for (std::int64_t s = 0; s < nw * t; ++s) {
      const std::int64_t tok = layout->token[static_cast<std::size_t>(s)];
      (*valid)[static_cast<std::size_t>(n * nw * t + s)] = tok >= 0 ? 1 : 0;
      for (std::int64_t k = 0; k < c; ++k) (*idx)[i++] = tok >= 0 ? (n * h * w + tok) * c + k : -1;
    }
  }
  Windows out;
  out.tokens = ops::gather(x, Shape{b * nw, t, c}, std::move(idx));
  out.layout = std::move(layout);
  out.batch = b;
  out.valid = std::move(valid);
  return out;
}

Var window_reverse(const Windows& windows) {
  const WindowLayout& l = *windows.layout;
  const std::int64_t b = windows.batch, c = windows.tokens.dim(2);
  const std::int64_t t = l.window * l.window, nw = l.num_windows();
  auto idx = make_index(static_cast<std::size_t>(b * l.height * l.width * c));
  for (std::int64_t n = 0; n < b; ++n) {
    for (std::int64_t s = 0; s < nw * t; ++s) {
      const std::int64_t tok = l.token[static_cast<std::size_t>(s)];
      if (tok < 0) continue;
      for (std::int64_t k = 0; k < c; ++k) {
        (*idx)[static_cast<std::size_t>((n * l.height * l.width + tok) * c + k)] = (n * nw * t + s) * c + k;
      }
    }
  }
  return ops::gather(windows.tokens, Shape{b, l.height, l.width, c}, std::move(idx));
}

SwinBlockParams make_swin_block(ParamSet& params, const std::string& name, const SwinStageConfig& stage, Rng& rng) {
  const std::int64_t c = stage.channels;
  const std::int64_t entries = (2 * stage.window - 1) * (2 * stage.window - 1);
  SwinBlockParams p;
  p.norm1 = make_layer_norm(params, name + ".norm1", c);
  p.qkv = make_linear(params, name + ".qkv", c, 3 * c, rng);
  Tensor table(Shape{stage.num_heads, entries});
  for (double& v : table.storage()) v = rng.truncated_normal(0.02);
  p.bias_table = params.add(name + ".bias_table", std::move(table));
  p.proj = make_linear(params, name + ".proj", c, c, rng);
  p.norm2 = make_layer_norm(params, name + ".norm2", c);
  p.fc1 = make_linear(params, name + ".fc1", c, stage.mlp_ratio * c, rng);
  p.fc2 = make_linear(params, name + ".fc2", stage.mlp_ratio * c, c, rng);
  return p;
}

Var window_msa(const Var& x, const SwinBlockParams& block, const SwinStageConfig& stage, std::int64_t shift) {
  require_rank4(x, "window_msa");
  const std::int64_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (c != stage.channels) {
    throw ShapeError("window_msa: input has " + std::to_string(c) + " channels, stage expects " +
                     std::to_string(stage.channels));
  }
  const std::int64_t heads = stage.num_heads, d = stage.head_dim(), m = stage.window, t = m * m;
  const WindowLayout layout = window_layout(h, w, m, shift);
  const std::int64_t nw = layout.num_windows();
  const std::int64_t groups = b * nw * heads;

  Var qkv = block.qkv(x);  // (B, H, W, 3C)

  // Gather q, k, v straight into (window, head) groups.
  std::array<std::shared_ptr<IndexVec>, 3> part_idx;
  for (auto& p : part_idx) p = make_index(static_cast<std::size_t>(groups * t * d));
  auto valid = std::make_shared<std::vector<std::uint8_t>>(static_cast<std::size_t>(b * nw * t));
  auto back = make_index(static_cast<std::size_t>(b * h * w * c));
  for (std::int64_t n = 0; n < b; ++n) {
    for (std::int64_t win = 0; win < nw; ++win) {
      for (std::int64_t s = 0; s < t; ++s) {
        const std::int64_t tok = layout.token[static_cast<std::size_t>(win * t + s)];
        (*valid)[static_cast<std::size_t>((n * nw + win) * t + s)] = tok >= 0 ? 1 : 0;
        for (std::int64_t hd = 0; hd < heads; ++hd) {
          const std::int64_t g = (n * nw + win) * heads + hd;
          for (std::int64_t j = 0; j < d; ++j) {
            const auto slot = static_cast<std::size_t>((g * t + s) * d + j);
            for (std::int64_t part = 0; part < 3; ++part) {
              (*part_idx[static_cast<std::size_t>(part)])[slot] =
                  tok >= 0 ? (n * h * w + tok) * 3 * c + part * c + hd * d + j : -1;
            }
            if (tok >= 0) (*back)[static_cast<std::size_t>((n * h * w + tok) * c + hd * d + j)] = static_cast<std::int64_t>(slot);
          }
        }
      }
    }
  }
  const Shape group_shape{groups, t, d};
  Var q = ops::gather(qkv, group_shape, part_idx[0]);
  Var k = ops::gather(qkv, group_shape, part_idx[1]);
  Var v = ops::gather(qkv, group_shape, part_idx[2]);
  Var bias = relative_position_bias(block.bias_table, m);
  Var att = ops::attention(q, k, v, bias, static_cast<int>(heads), ops::AttentionMask{valid});
  Var merged = ops::gather(att, Shape{b, h, w, c}, back);
  return block.proj(merged);
}

Var swin_block(const Var& x, const SwinBlockParams& block, const SwinStageConfig& stage, std::int64_t shift) {
  Var z_hat = ops::add(window_msa(block.norm1(x), block, stage, shift), x);
  Var hidden = ops::gelu(block.fc1(block.norm2(z_hat)));
  return ops::add(block.fc2(hidden), z_hat);
}

Var swin_block_pair(const Var& z, const SwinStageConfig& stage, const SwinBlockParams& regular,
                    const SwinBlockParams& shifted) {
  Var first = swin_block(z, regular, stage, 0);
  return swin_block(first, shifted, stage, stage.window / 2);
}

Var swin_stage(const Var& z, const SwinStageConfig& stage, const std::vector<SwinBlockParams>& blocks) {
  if (static_cast<int>(blocks.size()) != stage.depth) throw ShapeError("stage block count does not match depth");
  Var x = z;
  for (std::size_t i = 0; i + 1 < blocks.size(); i += 2) x = swin_block_pair(x, stage, blocks[i], blocks[i + 1]);
  return x;
}

Var patch_embed(const Var& image, std::int64_t patch, const Linear& embed) {
  require_rank4(image, "patch_embed");
  const std::int64_t b = image.dim(0), h = image.dim(1), w = image.dim(2), c = image.dim(3);
  if (patch < 1 || h % patch != 0 || w % patch != 0) {
    throw ShapeError("patch_embed: image " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by patch " + std::to_string(patch));
  }
  const std::int64_t gh = h / patch, gw = w / patch, raw = patch * patch * c;
  auto idx = make_index(static_cast<std::size_t>(b * gh * gw * raw));
  std::size_t i = 0;
  for (std::int64_t n = 0; n < b; ++n)
    for (std::int64_t y = 0; y < gh; ++y)
      for (std::int64_t x = 0; x < gw; ++x)
        for (std::int64_t py = 0; py < patch; ++py)
          for (std::int64_t px = 0; px < patch; ++px)
            for (std::int64_t k = 0; k < c; ++k) (*idx)[i++] = ((n * h + y * patch + py) * w + x * patch + px) * c + k;
  return embed(ops::gather(image, Shape{b, gh, gw, raw}, std::move(idx)));
}

Var patch_unembed(const Var& tokens, std::int64_t patch) {
  require_rank4(tokens, "patch_unembed");
  const std::int64_t b = tokens.dim(0), gh = tokens.dim(1), gw = tokens.dim(2), raw = tokens.dim(3);
  if (raw % (patch * patch) != 0) throw ShapeError("patch_unembed: channel count not a multiple of patch area");
  const std::int64_t c = raw / (patch * patch), h = gh * patch, w = gw * patch;
  auto idx = make_index(static_cast<std::size_t>(b * h * w * c));
  std::size_t i = 0;
  for (std::int64_t n = 0; n < b; ++n)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        for (std::int64_t k = 0; k < c; ++k) {
          const std::int64_t py = y % patch, px = x % patch;
          (*idx)[i++] = ((n * gh + y / patch) * gw + x / patch) * raw + (py * patch + px) * c + k;
        }
  return ops::gather(tokens, Shape{b, h, w, c}, std::move(idx));
}

Var space_to_depth2(const Var& x) {
  require_rank4(x, "patch_merge");
  const std::int64_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("patch_merge: odd spatial size " + std::to_string(h) + "x" + std::to_string(w));
  }
  const std::int64_t ho = h / 2, wo = w / 2;
  auto idx = make_index(static_cast<std::size_t>(b * ho * wo * 4 * c));
  std::size_t i = 0;
  for (std::int64_t n = 0; n < b; ++n)
    for (std::int64_t y = 0; y < ho; ++y)
      for (std::int64_t xx = 0; xx < wo; ++xx)
        for (std::int64_t g = 0; g < 4; ++g) {
          const std::int64_t sy = 2 * y + g / 2, sx = 2 * xx + g % 2;
          for (std::int64_t k = 0; k < c; ++k) (*idx)[i++] = ((n * h + sy) * w + sx) * c + k;
        }
  return ops::gather(x, Shape{b, ho, wo, 4 * c}, std::move(idx));
}

Var depth_to_space2(const Var& x) {
  require_rank4(x, "patch_expand");
  const std::int64_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c4 = x.dim(3);
  if (c4 % 4 != 0) throw ShapeError("patch_expand: channel count not divisible by 4");
  const std::int64_t c = c4 / 4, ho = 2 * h, wo = 2 * w;
  auto idx = make_index(static_cast<std::size_t>(b * ho * wo * c));
  std::size_t i = 0;
  for (std::int64_t n = 0; n < b; ++n)
    for (std::int64_t y = 0; y < ho; ++y)
      for (std::int64_t xx = 0; xx < wo; ++xx) {
        const std::int64_t g = (y % 2) * 2 + xx % 2;
        for (std::int64_t k = 0; k < c; ++k) (*idx)[i++] = ((n * h + y / 2) * w + xx / 2) * c4 + g * c + k;
      }
  return ops::gather(x, Shape{b, ho, wo, c}, std::move(idx));
}

Var patch_merge(const Var& x, const Linear& reduce) { return reduce(space_to_depth2(x)); }

Var patch_expand(const Var& x, const Linear& expand) {
  require_rank4(x, "patch_expand");
  return depth_to_space2(expand(x));
}

Var skip_fuse(const Var& fe, const Var& fd, const Region& center) {
  require_same_shape(fe.shape(), fd.shape(), "skip_fuse");
  require_rank4(fd, "skip_fuse");
  const std::int64_t b = fd.dim(0), h = fd.dim(1), w = fd.dim(2), c = fd.dim(3);
  if (center.top < 0 || center.left < 0 || center.top + center.height > h || center.left + center.width > w) {
    throw ShapeError("skip_fuse: center region out of bounds");
  }
  // fd' = fd + mask * (fe - fd) / 2 keeps non-center entries bit-identical to fd.
  auto idx = make_index(static_cast<std::size_t>(b * h * w * c));
  for (std::int64_t n = 0; n < b; ++n)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        for (std::int64_t k = 0; k < c; ++k) {
          const std::int64_t flat = ((n * h + y) * w + x) * c + k;
          (*idx)[static_cast<std::size_t>(flat)] = center.contains(y, x) ? flat : -1;
        }
  const Shape shape = fd.shape();
  Var fe_c = ops::gather(fe, shape, idx);
  Var fd_c = ops::gather(fd, shape, idx);
  Var fd_out = ops::sub(fd, fd_c);  // zero inside center, fd outside
  Var avg = ops::scale(ops::add(fe_c, fd_c), 0.5);
  return ops::add(fd_out, avg);
}

std::int64_t BackboneConfig::downsample() const { return stage_downsample(num_stages() - 1); }

std::int64_t BackboneConfig::stage_downsample(int level) const { return patch_size << level; }

std::int64_t BackboneConfig::bottleneck_channels() const { return embed_dim << (num_stages() - 1); }

SwinStageConfig BackboneConfig::stage(int level) const {
  SwinStageConfig s;
  s.depth = depths.at(static_cast<std::size_t>(level));
  s.num_heads = heads.at(static_cast<std::size_t>(level));
  s.channels = embed_dim << level;
  s.window = window;
  s.mlp_ratio = mlp_ratio;
  return s;
}

void BackboneConfig::validate() const {
  if (depths.empty() || depths.size() != heads.size()) throw ShapeError("depths and heads must be non-empty and equal length");
  if (patch_size < 1 || embed_dim < 1 || mlp_ratio < 1) throw ShapeError("invalid backbone sizes");
  for (int l = 0; l < num_stages(); ++l) stage(l).validate();
}

EncoderParams make_encoder(ParamSet& params, const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderParams e;
  e.patch_embed = make_linear(params, "encoder.patch_embed", cfg.patch_size * cfg.patch_size * 3, cfg.embed_dim, rng);
  for (int l = 0; l < cfg.num_stages(); ++l) {
    const SwinStageConfig st = cfg.stage(l);
    if (l > 0) {
      e.merges.push_back(make_linear(params, "encoder.merge" + std::to_string(l), 4 * cfg.stage(l - 1).channels,
                                     st.channels, rng));
    }
    std::vector<SwinBlockParams> blocks;
    for (int i = 0; i < st.depth; ++i) {
      blocks.push_back(make_swin_block(params, "encoder.stage" + std::to_string(l) + ".block" + std::to_string(i), st, rng));
    }
    e.stages.push_back(std::move(blocks));
  }
  return e;
}

DecoderParams make_decoder(ParamSet& params, const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  DecoderParams d;
  const int n = cfg.num_stages();
  d.stages.resize(static_cast<std::size_t>(n));
  d.expands.resize(static_cast<std::size_t>(std::max(n - 1, 0)));
  for (int l = n - 1; l >= 0; --l) {
    const SwinStageConfig st = cfg.stage(l);
    if (l < n - 1) {
      const std::int64_t in = cfg.stage(l + 1).channels;
      d.expands[static_cast<std::size_t>(l)] = make_linear(params, "decoder.expand" + std::to_string(l), in, 2 * in, rng);
    }
    for (int i = 0; i < st.depth; ++i) {
      d.stages[static_cast<std::size_t>(l)].push_back(
          make_swin_block(params, "decoder.stage" + std::to_string(l) + ".block" + std::to_string(i), st, rng));
    }
  }
  d.head = make_linear(params, "decoder.head", cfg.embed_dim, cfg.patch_size * cfg.patch_size * 3, rng);
  return d;
}

std::vector<Var> encoder_forward(const Var& image, const EncoderParams& enc, const BackboneConfig& cfg) {
  require_rank4(image, "encoder_forward");
  if (image.dim(3) != 3) throw ShapeError("encoder_forward: image must have 3 channels");
  if (image.dim(1) % cfg.downsample() != 0 || image.dim(2) % cfg.downsample() != 0) {
    throw ShapeError("encoder_forward: image " + std::to_string(image.dim(1)) + "x" + std::to_string(image.dim(2)) +
                     " not divisible by downsample " + std::to_string(cfg.downsample()));
  }
  std::vector<Var> stages;
  Var x = patch_embed(image, cfg.patch_size, enc.patch_embed);
  for (int l = 0; l < cfg.num_stages(); ++l) {
    if (l > 0) x = patch_merge(x, enc.merges[static_cast<std::size_t>(l - 1)]);
    x = swin_stage(x, cfg.stage(l), enc.stages[static_cast<std::size_t>(l)]);
    stages.push_back(x);
  }
  return stages;
}

Var decoder_forward(const Var& bottleneck, const std::vector<Var>& encoder_stages, const DecoderParams& dec,
                    const BackboneConfig& cfg, const OutpaintGeometry& geom) {
  const int n = cfg.num_stages();
  if (static_cast<int>(encoder_stages.size()) != n) throw ShapeError("decoder_forward: wrong number of encoder stages");
  const Shape expected{bottleneck.dim(0), geom.full_h() / cfg.downsample(), geom.full_w() / cfg.downsample(),
                       cfg.bottleneck_channels()};
  require_shape(bottleneck.value(), expected, "decoder_forward bottleneck");
  Var x = bottleneck;
  for (int l = n - 1; l >= 0; --l) {
    if (l < n - 1) x = patch_expand(x, dec.expands[static_cast<std::size_t>(l)]);
    x = skip_fuse(encoder_stages[static_cast<std::size_t>(l)], x, center_region(geom, cfg.stage_downsample(l)));
    x = swin_stage(x, cfg.stage(l), dec.stages[static_cast<std::size_t>(l)]);
  }
  return ops::tanh(patch_unembed(dec.head(x), cfg.patch_size));
}

}  // namespace utr
