#include "utr/generator.hpp"

namespace utr {

GeneratorParams make_generator(const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  GeneratorParams g;
  g.encoder = make_encoder(g.params, cfg, rng);
  g.tsp = make_tsp(g.params, cfg.bottleneck_channels(), cfg.heads.back(), rng);
  g.decoder = make_decoder(g.params, cfg, rng);
  return g;
}

GeneratorOutput generator_forward(const GeneratorParams& g, const BackboneConfig& cfg, const Var& masked,
                                  const OutpaintGeometry& geom, std::int64_t steps) {
  OutpaintGeometry canvas = geom.with_steps(steps);
  canvas.downsample = cfg.downsample();
  canvas.validate();
  if (masked.value().rank() != 4 || masked.dim(1) != canvas.full_h() || masked.dim(2) != canvas.full_w() ||
      masked.dim(3) != 3) {
    throw GeometryError("generator input " + shape_str(masked.shape()) + " does not match canvas " +
                        std::to_string(canvas.full_h()) + "x" + std::to_string(canvas.full_w()));
  }
  GeneratorOutput out;
  out.encoder_stages = encoder_forward(masked, g.encoder, cfg);
  Var center_image = constant(crop_center(masked.value(), canvas));
  out.center_features = encoder_forward(center_image, g.encoder, cfg).back();

  const std::int64_t ring = geom.m / cfg.downsample();
  out.tsp_map = ring > 0 ? tsp_forward(out.center_features, steps, ring, g.tsp) : g.tsp.final_norm(out.center_features);
  const std::int64_t off = ring * steps;
  const std::int64_t ch = out.center_features.dim(1), cw = out.center_features.dim(2);
  out.f_center = ops::slice(ops::slice(out.tsp_map, 1, off, ch), 2, off, cw);
  out.image = decoder_forward(out.tsp_map, out.encoder_stages, g.decoder, cfg, canvas);
  return out;
}

Tensor outpaint(const GeneratorParams& g, const BackboneConfig& cfg, const Tensor& center,
                const OutpaintGeometry& geom, std::int64_t steps, double fill, bool keep_center) {
  OutpaintGeometry canvas = geom.with_steps(steps);
  canvas.downsample = cfg.downsample();
  NoGradGuard no_grad;
  Tensor masked = embed_center(center, canvas, fill);
  Tensor image = generator_forward(g, cfg, constant(masked), geom, steps).image.value();
  if (keep_center) {
    const std::int64_t b = image.dim(0);
    for (std::int64_t n = 0; n < b; ++n)
      for (std::int64_t y = 0; y < canvas.h; ++y)
        for (std::int64_t x = 0; x < canvas.w; ++x)
          for (std::int64_t c = 0; c < 3; ++c) image.at(n, y + canvas.m, x + canvas.m, c) = center.at(n, y, x, c);
  }
  return image;
}

}  // namespace utr
