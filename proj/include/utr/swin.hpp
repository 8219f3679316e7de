#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "utr/geometry.hpp"
#include "utr/layers.hpp"

namespace utr {

/// One resolution level of the encoder or decoder.
struct SwinStageConfig {
  int depth = 2;       // blocks, in W-MSA / SW-MSA pairs
  int num_heads = 1;
  std::int64_t channels = 0;
  std::int64_t window = 7;
  std::int64_t mlp_ratio = 4;

  std::int64_t head_dim() const { return channels / num_heads; }
  void validate() const;
};

// ---------------------------------------------------------------------------
// Relative position bias

/// Flat table offset for every (query, key) pair of an M x M window, row-major
/// over M^2 x M^2.
std::vector<std::int64_t> relative_position_index(std::int64_t window);

/// Expands a (heads, (2M-1)^2) table to the (heads, M^2, M^2) bias.
Var relative_position_bias(const Var& table, std::int64_t window);

// ---------------------------------------------------------------------------
// Windowing

/// Placement of an (H, W) token grid into M x M windows. The grid is shifted
/// down-right by `shift` tokens and zero padded to whole windows; padded slots
/// carry index -1.
struct WindowLayout {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t window = 0;
  std::int64_t shift = 0;
  std::int64_t windows_y = 0;
  std::int64_t windows_x = 0;
  std::vector<std::int64_t> token;  // per (window, slot): y * W + x, or -1

  std::int64_t num_windows() const { return windows_y * windows_x; }
  std::int64_t padded_height() const { return windows_y * window; }
  std::int64_t padded_width() const { return windows_x * window; }
  std::int64_t pad_bottom() const { return padded_height() - height - shift; }
  std::int64_t pad_right() const { return padded_width() - width - shift; }
};

WindowLayout window_layout(std::int64_t height, std::int64_t width, std::int64_t window, std::int64_t shift = 0);

struct Windows {
  Var tokens;  // (B * num_windows, M^2, C)
  std::shared_ptr<const WindowLayout> layout;
  std::int64_t batch = 0;
  std::shared_ptr<const std::vector<std::uint8_t>> valid;  // (B * num_windows * M^2)
};

Windows window_partition(const Var& x, std::int64_t window, std::int64_t shift = 0);
Var window_reverse(const Windows& windows);

// ---------------------------------------------------------------------------
// Blocks

struct SwinBlockParams {
  LayerNorm norm1;
  Linear qkv;        // C -> 3C
  Var bias_table;    // (heads, (2M-1)^2)
  Linear proj;       // C -> C
  LayerNorm norm2;
  Linear fc1;        // C -> ratio*C
  Linear fc2;        // ratio*C -> C
};

SwinBlockParams make_swin_block(ParamSet& params, const std::string& name, const SwinStageConfig& stage, Rng& rng);

/// (Shifted) window multi-head self-attention on a (B, H, W, C) map.
Var window_msa(const Var& x, const SwinBlockParams& block, const SwinStageConfig& stage, std::int64_t shift);

/// x + MSA(LN(x)), then + MLP(LN(.)).
Var swin_block(const Var& x, const SwinBlockParams& block, const SwinStageConfig& stage, std::int64_t shift);

/// W-MSA block followed by an SW-MSA block shifted by floor(M / 2).
Var swin_block_pair(const Var& z, const SwinStageConfig& stage, const SwinBlockParams& regular,
                    const SwinBlockParams& shifted);

/// All blocks of a stage, alternating regular and shifted windows.
Var swin_stage(const Var& z, const SwinStageConfig& stage, const std::vector<SwinBlockParams>& blocks);

// ---------------------------------------------------------------------------
// Resampling

/// (B, H, W, 3) -> (B, H/p, W/p, C). Patch pixels flatten as (py, px, rgb).
Var patch_embed(const Var& image, std::int64_t patch, const Linear& embed);
/// Inverse layout of patch_embed: (B, h, w, p*p*3) -> (B, h*p, w*p, 3).
Var patch_unembed(const Var& tokens, std::int64_t patch);
/// (B, H, W, C) -> (B, H/2, W/2, 4C), groups ordered TL, TR, BL, BR.
Var space_to_depth2(const Var& x);
/// Inverse of space_to_depth2.
Var depth_to_space2(const Var& x);
/// Concatenate 2x2 groups, then linear 4C -> 2C.
Var patch_merge(const Var& x, const Linear& reduce);
/// Linear 2C -> 4C, then each token's four channel groups become a 2x2 block.
Var patch_expand(const Var& x, const Linear& expand);

/// fd everywhere except `center`, where it becomes (fe + fd) / 2.
Var skip_fuse(const Var& fe, const Var& fd, const Region& center);

// ---------------------------------------------------------------------------
// Encoder / decoder

struct BackboneConfig {
  std::int64_t patch_size = 4;
  std::int64_t embed_dim = 96;
  std::int64_t window = 7;
  std::int64_t mlp_ratio = 4;
  std::vector<int> depths{2, 2, 6, 2};
  std::vector<int> heads{3, 6, 12, 24};

  int num_stages() const { return static_cast<int>(depths.size()); }
  std::int64_t downsample() const;
  std::int64_t stage_downsample(int level) const;
  std::int64_t bottleneck_channels() const;
  SwinStageConfig stage(int level) const;
  void validate() const;
};

struct EncoderParams {
  Linear patch_embed;
  std::vector<std::vector<SwinBlockParams>> stages;
  std::vector<Linear> merges;  // merges[l] feeds stage l + 1
};

struct DecoderParams {
  std::vector<std::vector<SwinBlockParams>> stages;  // indexed by level
  std::vector<Linear> expands;                       // expands[l]: level l + 1 -> level l
  Linear head;                                       // C -> p*p*3
};

EncoderParams make_encoder(ParamSet& params, const BackboneConfig& cfg, Rng& rng);
DecoderParams make_decoder(ParamSet& params, const BackboneConfig& cfg, Rng& rng);

/// Per-stage outputs, finest first; the last entry is the bottleneck.
std::vector<Var> encoder_forward(const Var& image, const EncoderParams& enc, const BackboneConfig& cfg);

/// Runs the decoder from a bottleneck map, fusing encoder stages on their
/// center regions. `geom` describes the output canvas. Output in (-1, 1).
Var decoder_forward(const Var& bottleneck, const std::vector<Var>& encoder_stages, const DecoderParams& dec,
                    const BackboneConfig& cfg, const OutpaintGeometry& geom);

}  // namespace utr
