#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "ctxbias/dataset.hpp"

namespace ctxbias::data {

struct PairSpec {
  std::size_t b = 0;
  std::size_t c = 0;
  double cooccur_rate = 0.0;
};

// Desk-scale stand-in for a contextually biased multi-label dataset.
//
// Each category renders as one shape kind in one palette color on a black
// background. Shapes occupy distinct cells of a grid with 8-pixel minimum
// cells, so image_size / 8 squared bounds how many categories an image can
// hold. Categories named in pair_specs must be distinct across specs.
struct SyntheticConfig {
  std::size_t num_images = 200;
  int image_size = 32;
  std::size_t num_categories = 4;
  std::vector<PairSpec> pair_specs;
  std::uint64_t seed = 0;
  // Independent presence probability for b categories and unpaired ones.
  double presence_rate = 0.3;
  // Presence probability of a context category on images without its b.
  double context_rate = 0.3;
  // Per-category shape size multiplier in (0, 1]; empty means all 1.
  std::vector<double> size_scale;
  // Std-dev of additive Gaussian pixel noise (applied before quantization).
  double noise_std = 0.0;
  std::string id_prefix = "syn";
};

enum class ShapeKind {
  square,
  disk,
  cross,
  frame,
  hbar,
  vbar,
  diamond,
  triangle,
};

struct ShapeStyle {
  ShapeKind kind = ShapeKind::square;
  std::array<float, 3> color{};
};

inline constexpr std::size_t kMaxSyntheticCategories = 26;

ShapeStyle style_for_category(std::size_t category);
std::size_t grid_cells(int image_size);

LabeledDataset generate_synthetic(const SyntheticConfig& cfg);

// Re-derives the label row from pixel content: a category is present when at
// least min_pixels pixels lie within color_tolerance of its palette color.
std::vector<std::uint8_t> detect_categories(const Image& image,
                                            std::size_t num_categories,
                                            double color_tolerance = 0.25,
                                            std::size_t min_pixels = 3);

// Directory layout: labels.csv, images/<id>.png, boxes.json (if boxes exist).
void save_dataset_dir(const LabeledDataset& dataset,
                      const std::filesystem::path& dir);
LabeledDataset load_dataset_dir(const std::filesystem::path& dir,
                                bool preload_images = true);

}  // namespace ctxbias::data
