#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ctxbias/rng.hpp"

namespace ctxbias::data {

// Interleaved H×W×C image with channel values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c),
        pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  float& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool empty() const { return pixels.empty(); }

  bool operator==(const Image&) const = default;
};

struct CropRect {
  int y = 0;
  int x = 0;
  int height = 0;
  int width = 0;

  bool operator==(const CropRect&) const = default;
};

// Train: random resized crop to crop_size + optional horizontal flip.
// Eval: resize shorter side to resize_shorter, then center crop crop_size.
struct PreprocessOptions {
  int resize_shorter = 256;
  int crop_size = 224;
  double min_scale = 0.08;
  double max_scale = 1.0;
  double min_ratio = 3.0 / 4.0;
  double max_ratio = 4.0 / 3.0;
  bool random_crop = true;
  bool flip = true;
};

Image read_png(const std::filesystem::path& path);
// Writes 8-bit RGB (or gray for single-channel). Values are clamped and
// rounded to the nearest 1/255 step.
void write_png(const Image& image, const std::filesystem::path& path);

// Bilinear with half-pixel centers. Same-size resize returns the input.
Image resize_bilinear(const Image& image, int height, int width);
Image crop(const Image& image, const CropRect& rect);
Image flip_horizontal(const Image& image);
Image resize_shorter_side(const Image& image, int shorter);
CropRect center_crop_rect(int height, int width, int size);

CropRect sample_resized_crop(int height, int width,
                             const PreprocessOptions& opts, Rng& rng);

Image preprocess_eval(const Image& image, const PreprocessOptions& opts);
Image preprocess_train(const Image& image, const PreprocessOptions& opts,
                       Rng& rng);

// Rounds every channel value to the nearest 8-bit level.
void quantize_8bit(Image& image);

}  // namespace ctxbias::data
