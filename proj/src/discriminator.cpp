#include "utr/discriminator.hpp"

#include <string>

namespace utr {

DiscriminatorParams make_discriminator(const DiscriminatorConfig& cfg, std::int64_t input_h, std::int64_t input_w,
                                       Rng& rng) {
  if (cfg.layers < 1 || cfg.base_channels < 1) throw std::invalid_argument("invalid discriminator config");
  DiscriminatorParams d;
  d.leaky_slope = cfg.leaky_slope;
  d.input_h = input_h;
  d.input_w = input_w;
  std::int64_t h = input_h, w = input_w, in = 3, out = cfg.base_channels;
  for (int l = 0; l < cfg.layers; ++l) {
    d.convs.push_back(make_conv2d(d.params, "discriminator.conv" + std::to_string(l), in, out, 4, 2, 1, rng, 0.02));
    h = conv_output_size(h, 4, 2, 1);
    w = conv_output_size(w, 4, 2, 1);
    in = out;
    out *= 2;
  }
  d.head = make_linear(d.params, "discriminator.head", h * w * in, 1, rng);
  return d;
}

Var discriminator_forward(const DiscriminatorParams& d, const Var& image) {
  if (image.value().rank() != 4 || image.dim(1) != d.input_h || image.dim(2) != d.input_w || image.dim(3) != 3) {
    throw ShapeError("discriminator expects (B, " + std::to_string(d.input_h) + ", " + std::to_string(d.input_w) +
                     ", 3), got " + shape_str(image.shape()));
  }
  Var x = image;
  for (const auto& conv : d.convs) x = ops::leaky_relu(conv(x), d.leaky_slope);
  const std::int64_t b = x.dim(0);
  Var flat = ops::reshape(x, Shape{b, x.numel() / b});
  return ops::reshape(d.head(flat), Shape{b});
}

}  // namespace utr
