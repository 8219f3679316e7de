#include "utr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "utr/image_io.hpp"
#include "utr/rng.hpp"

namespace fs = std::filesystem;

namespace utr {

Dataset load_dataset(const std::string& dir, const OutpaintGeometry& geom, double fill) {
  geom.validate();
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw DatasetError("data directory " + dir + " does not exist");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && has_image_extension(entry.path().string())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  Dataset data;
  for (const auto& f : files) {
    Image8 img;
    try {
      img = read_image(f.string());
    } catch (const ImageError& e) {
      std::cerr << "warning: skipping " << f.string() << ": " << e.what() << "\n";
      continue;
    }
    Tensor t = image_to_tensor(img);
    if (t.dim(1) != geom.full_h() || t.dim(2) != geom.full_w()) t = resize_bilinear(t, geom.full_h(), geom.full_w());
    data.names.push_back(f.filename().string());
    data.samples.push_back(make_masked_input(t, geom, fill));
  }
  if (data.samples.empty()) throw DatasetError("no decodable PNG/JPEG images in " + dir);
  return data;
}

std::int64_t full_batches(std::int64_t dataset_size, std::int64_t batch_size) {
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  return dataset_size / batch_size;
}

std::vector<std::int64_t> epoch_order(std::int64_t n, std::uint64_t seed, std::int64_t epoch) {
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(epoch) + 1);
  for (std::int64_t i = n - 1; i > 0; --i) {
    const std::int64_t j = rng.uniform_int(0, i);
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  return order;
}

Batch make_batch(const Dataset& data, const std::vector<std::int64_t>& indices) {
  if (indices.empty()) throw DatasetError("empty batch");
  const Shape one = data.samples.front().ground_truth.shape();
  const std::int64_t per = shape_numel(one);
  const auto b = static_cast<std::int64_t>(indices.size());
  Batch batch;
  batch.masked = Tensor(Shape{b, one[1], one[2], one[3]});
  batch.ground_truth = Tensor(Shape{b, one[1], one[2], one[3]});
  batch.indices = indices;
  for (std::int64_t i = 0; i < b; ++i) {
    const MaskedSample& s = data.samples.at(static_cast<std::size_t>(indices[static_cast<std::size_t>(i)]));
    std::copy_n(s.masked_image.data().begin(), per, batch.masked.data().begin() + i * per);
    std::copy_n(s.ground_truth.data().begin(), per, batch.ground_truth.data().begin() + i * per);
  }
  return batch;
}

Batch batch_for_step(const Dataset& data, std::int64_t step, std::int64_t batch_size, std::uint64_t seed) {
  const auto n = static_cast<std::int64_t>(data.size());
  const std::int64_t per_epoch = full_batches(n, batch_size);
  if (per_epoch < 1) {
    throw DatasetError("dataset of " + std::to_string(n) + " images is smaller than batch size " +
                       std::to_string(batch_size));
  }
  const std::int64_t epoch = step / per_epoch, slot = step % per_epoch;
  const auto order = epoch_order(n, seed, epoch);
  std::vector<std::int64_t> idx(order.begin() + slot * batch_size, order.begin() + (slot + 1) * batch_size);
  return make_batch(data, idx);
}

std::vector<std::string> gen_synthetic(std::int64_t count, std::int64_t size, std::uint64_t seed,
                                       const std::string& out_dir) {
  if (count < 1) throw std::invalid_argument("count must be >= 1");
  if (size < 1) throw std::invalid_argument("size must be >= 1");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir)) throw DatasetError("cannot create output directory " + out_dir);
  std::vector<std::string> written;
  constexpr double kTwoPi = 6.283185307179586;
  for (std::int64_t i = 0; i < count; ++i) {
    Rng rng(seed * 1000003ull + static_cast<std::uint64_t>(i));
    double c0[3], c1[3];
    for (double& v : c0) v = rng.uniform();
    for (double& v : c1) v = rng.uniform();
    const double angle = rng.uniform(0.0, kTwoPi);
    const double gx = std::cos(angle), gy = std::sin(angle);
    const double amp = rng.uniform(0.05, 0.2);
    const double freq = rng.uniform(1.0, 4.0);
    const double tex_angle = rng.uniform(0.0, kTwoPi);
    const double phase = rng.uniform(0.0, kTwoPi);
    struct Rect {
      double x0, y0, x1, y1, color[3];
    };
    std::vector<Rect> rects(static_cast<std::size_t>(rng.uniform_int(0, 3)));
    for (auto& r : rects) {
      const double a = rng.uniform(), b = rng.uniform(), c = rng.uniform(), d = rng.uniform();
      r.x0 = std::min(a, b);
      r.x1 = std::max(a, b);
      r.y0 = std::min(c, d);
      r.y1 = std::max(c, d);
      for (double& v : r.color) v = rng.uniform();
    }
    Image8 img;
    img.width = size;
    img.height = size;
    img.rgb.resize(static_cast<std::size_t>(size * size * 3));
    for (std::int64_t y = 0; y < size; ++y) {
      for (std::int64_t x = 0; x < size; ++x) {
        const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(size);
        const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(size);
        // Projection onto the gradient direction, rescaled to [0, 1].
        const double t = std::clamp(((u - 0.5) * gx + (v - 0.5) * gy) / std::sqrt(0.5) + 0.5, 0.0, 1.0);
        const double wave =
            amp * std::sin(kTwoPi * freq * (u * std::cos(tex_angle) + v * std::sin(tex_angle)) + phase);
        double px[3];
        for (int k = 0; k < 3; ++k) px[k] = c0[k] * (1.0 - t) + c1[k] * t + wave;
        for (const auto& r : rects) {
          if (u >= r.x0 && u <= r.x1 && v >= r.y0 && v <= r.y1) {
            for (int k = 0; k < 3; ++k) px[k] = r.color[k] + 0.5 * wave;
          }
        }
        for (int k = 0; k < 3; ++k) {
          img.rgb[static_cast<std::size_t>((y * size + x) * 3 + k)] =
              static_cast<std::uint8_t>(std::lround(std::clamp(px[k], 0.0, 1.0) * 255.0));
        }
      }
    }
    char name[64];
    std::snprintf(name, sizeof(name), "synthetic_%05lld.png", static_cast<long long>(i));
    const std::string path = (fs::path(out_dir) / name).string();
    write_png(path, img);
    written.push_back(path);
  }
  return written;
}

}  // namespace utr
