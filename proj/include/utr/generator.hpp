#pragma once

#include <vector>

#include "utr/geometry.hpp"
#include "utr/swin.hpp"
#include "utr/tsp.hpp"

namespace utr {

/// Encoder, TSP bottleneck and decoder weights under one registry.
struct GeneratorParams {
  ParamSet params;
  EncoderParams encoder;
  TspParams tsp;
  DecoderParams decoder;

  GeneratorParams() = default;
  GeneratorParams(GeneratorParams&&) = default;
  GeneratorParams& operator=(GeneratorParams&&) = default;
  GeneratorParams(const GeneratorParams&) = delete;
  GeneratorParams& operator=(const GeneratorParams&) = delete;
};

GeneratorParams make_generator(const BackboneConfig& cfg, Rng& rng);

struct GeneratorOutput {
  Var image;                         // (B, h + 2Km, w + 2Km, 3) in (-1, 1)
  Var tsp_map;                       // bottleneck after extrapolation
  Var f_center;                      // center block of tsp_map
  Var center_features;               // encoder bottleneck of the center crop
  std::vector<Var> encoder_stages;   // encoder stages of the masked canvas
};

/// Full generator pass. `masked` is the (B, h + 2Km, w + 2Km, 3) canvas for
/// K = `steps` rounds of extrapolation with the per-step margin of `geom`.
/// The encoder sees the whole canvas for skip fusion and, separately, the
/// center crop, whose bottleneck seeds the TSP.
GeneratorOutput generator_forward(const GeneratorParams& g, const BackboneConfig& cfg, const Var& masked,
                                  const OutpaintGeometry& geom, std::int64_t steps = 1);

/// Inference helper: (B, h, w, 3) normalized center -> (B, h + 2Km, w + 2Km, 3).
Tensor outpaint(const GeneratorParams& g, const BackboneConfig& cfg, const Tensor& center,
                const OutpaintGeometry& geom, std::int64_t steps, double fill, bool keep_center);

}  // namespace utr
