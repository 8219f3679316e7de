#include "utr/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>

extern "C" {
#include <jpeglib.h>
}

namespace utr {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

bool is_png(const std::vector<unsigned char>& head) {
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  return head.size() >= 8 && std::memcmp(head.data(), sig, 8) == 0;
}

bool is_jpeg(const std::vector<unsigned char>& head) {
  return head.size() >= 3 && head[0] == 0xFF && head[1] == 0xD8 && head[2] == 0xFF;
}

Image8 read_png(const std::string& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw ImageError(path + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  Image8 out;
  out.width = img.width;
  out.height = img.height;
  out.rgb.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw ImageError(path + ": " + msg);
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

Image8 read_jpeg(const std::string& path) {
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "rb"));
  if (!file) throw ImageError("cannot open " + path);
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  Image8 out;
  // No C++ objects with non-trivial destructors are created between setjmp
  // and the libjpeg calls that may longjmp.
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw ImageError(path + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.width = cinfo.output_width;
  out.height = cinfo.output_height;
  out.rgb.resize(static_cast<std::size_t>(out.width * out.height * 3));
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * static_cast<std::size_t>(out.width) * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

}  // namespace

Image8 read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open " + path);
  std::vector<unsigned char> head(8, 0);
  in.read(reinterpret_cast<char*>(head.data()), 8);
  head.resize(static_cast<std::size_t>(in.gcount()));
  if (is_png(head)) return read_png(path);
  if (is_jpeg(head)) return read_jpeg(path);
  throw ImageError(path + ": not a PNG or JPEG file");
}

void write_png(const std::string& path, const Image8& image) {
  if (image.rgb.size() != static_cast<std::size_t>(image.width * image.height * 3)) {
    throw ImageError("write_png: pixel buffer does not match dimensions");
  }
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.rgb.data(), 0, nullptr)) {
    throw ImageError("cannot write " + path + ": " + img.message);
  }
}

Tensor image_to_tensor(const Image8& image) {
  Tensor t(Shape{1, image.height, image.width, 3});
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = 2.0 * (image.rgb[static_cast<std::size_t>(i)] / 255.0) - 1.0;
  return t;
}

Image8 tensor_to_image(const Tensor& t, std::int64_t index) {
  if (t.rank() != 4 || t.dim(3) != 3 || index < 0 || index >= t.dim(0)) {
    throw ImageError("tensor_to_image: expected (B, H, W, 3), got " + shape_str(t.shape()));
  }
  Image8 img;
  img.height = t.dim(1);
  img.width = t.dim(2);
  img.rgb.resize(static_cast<std::size_t>(img.width * img.height * 3));
  const std::int64_t per = img.width * img.height * 3;
  for (std::int64_t i = 0; i < per; ++i) {
    const double u = std::clamp((t[index * per + i] + 1.0) * 0.5, 0.0, 1.0);
    img.rgb[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(u * 255.0));
  }
  return img;
}

Tensor resize_bilinear(const Tensor& t, std::int64_t out_h, std::int64_t out_w) {
  if (t.rank() != 4) throw ShapeError("resize_bilinear: expected (B, H, W, C)");
  const std::int64_t b = t.dim(0), h = t.dim(1), w = t.dim(2), c = t.dim(3);
  if (out_h < 1 || out_w < 1 || h < 1 || w < 1) throw ShapeError("resize_bilinear: empty size");
  Tensor out(Shape{b, out_h, out_w, c});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::int64_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const auto y0 = static_cast<std::int64_t>(std::floor(fy));
    const std::int64_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::int64_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const auto x0 = static_cast<std::int64_t>(std::floor(fx));
      const std::int64_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::int64_t n = 0; n < b; ++n)
        for (std::int64_t k = 0; k < c; ++k) {
          const double top = t.at(n, y0, x0, k) * (1 - wx) + t.at(n, y0, x1, k) * wx;
          const double bot = t.at(n, y1, x0, k) * (1 - wx) + t.at(n, y1, x1, k) * wx;
          out.at(n, y, x, k) = top * (1 - wy) + bot * wy;
        }
    }
  }
  return out;
}

Tensor to_unit_range(const Tensor& t) {
  Tensor out = t;
  for (double& v : out.storage()) v = std::clamp((v + 1.0) * 0.5, 0.0, 1.0);
  return out;
}

bool has_image_extension(const std::string& path) {
  std::string ext = std::filesystem::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace utr
