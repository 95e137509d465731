#include "ctxbias/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "ctxbias/error.hpp"

namespace ctxbias::data {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t to_byte(float v) {
  const float clamped = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(clamped * 255.0f));
}

}  // namespace

Image read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw ParseError("cannot open image " + path.string());

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError("corrupt PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int channels = png_get_channels(png, info);
  std::vector<png_byte> raw(static_cast<std::size_t>(width) * height * channels);
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y) {
    rows[y] = raw.data() + static_cast<std::size_t>(y) * width * channels;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image image(height, width, channels);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    image.pixels[i] = static_cast<float>(raw[i]) / 255.0f;
  }
  return image;
}

void write_png(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 1 && image.channels != 3) {
    throw Error("write_png supports 1 or 3 channels");
  }
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error("cannot write image " + path.string());

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("failed writing PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, image.width, image.height, 8,
               image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_byte> row(static_cast<std::size_t>(image.width) *
                            image.channels);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        row[static_cast<std::size_t>(x) * image.channels + c] =
            to_byte(image.at(y, x, c));
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image resize_bilinear(const Image& image, int height, int width) {
  if (height == image.height && width == image.width) return image;
  Image out(height, width, image.channels);
  const double sy = static_cast<double>(image.height) / height;
  const double sx = static_cast<double>(image.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(image.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(image.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < image.channels; ++c) {
        const double top =
            image.at(y0, x0, c) * (1.0 - wx) + image.at(y0, x1, c) * wx;
        const double bottom =
            image.at(y1, x0, c) * (1.0 - wx) + image.at(y1, x1, c) * wx;
        out.at(y, x, c) = static_cast<float>(top * (1.0 - wy) + bottom * wy);
      }
    }
  }
  return out;
}

Image crop(const Image& image, const CropRect& rect) {
  if (rect.y < 0 || rect.x < 0 || rect.height <= 0 || rect.width <= 0 ||
      rect.y + rect.height > image.height || rect.x + rect.width > image.width) {
    throw Error("crop rectangle outside image");
  }
  Image out(rect.height, rect.width, image.channels);
  for (int y = 0; y < rect.height; ++y) {
    const auto* src = &image.pixels[(static_cast<std::size_t>(rect.y + y) *
                                         image.width +
                                     rect.x) *
                                    image.channels];
    std::copy_n(src, static_cast<std::size_t>(rect.width) * image.channels,
                &out.pixels[static_cast<std::size_t>(y) * rect.width *
                            image.channels]);
  }
  return out;
}

Image flip_horizontal(const Image& image) {
  Image out(image.height, image.width, image.channels);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        out.at(y, image.width - 1 - x, c) = image.at(y, x, c);
      }
    }
  }
  return out;
}

Image resize_shorter_side(const Image& image, int shorter) {
  if (image.height <= image.width) {
    const int w = static_cast<int>(std::lround(
        static_cast<double>(image.width) * shorter / image.height));
    return resize_bilinear(image, shorter, std::max(w, 1));
  }
  const int h = static_cast<int>(
      std::lround(static_cast<double>(image.height) * shorter / image.width));
  return resize_bilinear(image, std::max(h, 1), shorter);
}

CropRect center_crop_rect(int height, int width, int size) {
  const int h = std::min(size, height);
  const int w = std::min(size, width);
  return {(height - h) / 2, (width - w) / 2, h, w};
}

CropRect sample_resized_crop(int height, int width,
                             const PreprocessOptions& opts, Rng& rng) {
  const double area = static_cast<double>(height) * width;
  const double log_lo = std::log(opts.min_ratio);
  const double log_hi = std::log(opts.max_ratio);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(opts.min_scale, opts.max_scale);
    const double ratio = std::exp(rng.uniform(log_lo, log_hi));
    const int w = static_cast<int>(std::lround(std::sqrt(target * ratio)));
    const int h = static_cast<int>(std::lround(std::sqrt(target / ratio)));
    if (w > 0 && h > 0 && w <= width && h <= height) {
      const int y = static_cast<int>(rng.index(height - h + 1));
      const int x = static_cast<int>(rng.index(width - w + 1));
      return {y, x, h, w};
    }
  }
  // Fallback: largest centered crop within the ratio bounds.
  const double in_ratio = static_cast<double>(width) / height;
  int w = width;
  int h = height;
  if (in_ratio < opts.min_ratio) {
    h = static_cast<int>(std::lround(w / opts.min_ratio));
  } else if (in_ratio > opts.max_ratio) {
    w = static_cast<int>(std::lround(h * opts.max_ratio));
  }
  return {(height - h) / 2, (width - w) / 2, h, w};
}

Image preprocess_eval(const Image& image, const PreprocessOptions& opts) {
  const Image resized = resize_shorter_side(image, opts.resize_shorter);
  return crop(resized,
              center_crop_rect(resized.height, resized.width, opts.crop_size));
}

Image preprocess_train(const Image& image, const PreprocessOptions& opts,
                       Rng& rng) {
  Image out;
  if (opts.random_crop) {
    const CropRect rect = sample_resized_crop(image.height, image.width, opts, rng);
    out = resize_bilinear(crop(image, rect), opts.crop_size, opts.crop_size);
  } else {
    out = preprocess_eval(image, opts);
  }
  if (opts.flip && rng.bernoulli(0.5)) out = flip_horizontal(out);
  return out;
}

void quantize_8bit(Image& image) {
  for (auto& v : image.pixels) v = static_cast<float>(to_byte(v)) / 255.0f;
}

}  // namespace ctxbias::data
