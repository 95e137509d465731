#include "ctxbias/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ctxbias/error.hpp"
#include "ctxbias/rng.hpp"

namespace ctxbias::data {

namespace {

constexpr int kMinCell = 8;

// Corners and edge midpoints of the RGB cube at levels {0, 0.5, 1}, black
// excluded. Pairwise distance >= 0.5.
std::array<float, 3> palette_color(std::size_t k) {
  static const std::array<std::array<float, 3>, kMaxSyntheticCategories> kPalette = {{
      {1.0f, 0.0f, 0.0f}, {0.0f, 1.0f, 0.0f}, {0.0f, 0.0f, 1.0f},
      {1.0f, 1.0f, 0.0f}, {0.0f, 1.0f, 1.0f}, {1.0f, 0.0f, 1.0f},
      {1.0f, 1.0f, 1.0f}, {1.0f, 0.5f, 0.0f}, {0.5f, 0.0f, 1.0f},
      {0.0f, 0.5f, 1.0f}, {0.5f, 1.0f, 0.0f}, {1.0f, 0.0f, 0.5f},
      {0.0f, 1.0f, 0.5f}, {0.5f, 0.5f, 0.5f}, {1.0f, 0.5f, 0.5f},
      {0.5f, 1.0f, 0.5f}, {0.5f, 0.5f, 1.0f}, {1.0f, 1.0f, 0.5f},
      {0.5f, 1.0f, 1.0f}, {1.0f, 0.5f, 1.0f}, {0.5f, 0.0f, 0.0f},
      {0.0f, 0.5f, 0.0f}, {0.0f, 0.0f, 0.5f}, {0.5f, 0.5f, 0.0f},
      {0.0f, 0.5f, 0.5f}, {0.5f, 0.0f, 0.5f},
  }};
  return kPalette.at(k);
}

bool shape_covers(ShapeKind kind, int dy, int dx, int size) {
  const double c = (size - 1) / 2.0;
  const double ry = dy - c;
  const double rx = dx - c;
  const int third = std::max(1, size / 3);
  switch (kind) {
    case ShapeKind::square:
      return true;
    case ShapeKind::disk:
      return ry * ry + rx * rx <= (size / 2.0) * (size / 2.0);
    case ShapeKind::cross:
      return std::abs(ry) < third / 2.0 + 0.5 || std::abs(rx) < third / 2.0 + 0.5;
    case ShapeKind::frame:
      return dy == 0 || dx == 0 || dy == size - 1 || dx == size - 1;
    case ShapeKind::hbar:
      return std::abs(ry) < third / 2.0 + 0.5;
    case ShapeKind::vbar:
      return std::abs(rx) < third / 2.0 + 0.5;
    case ShapeKind::diamond:
      return std::abs(ry) + std::abs(rx) <= size / 2.0;
    case ShapeKind::triangle:
      return std::abs(rx) <= dy / 2.0 + 0.5;
  }
  return false;
}

void validate_config(const SyntheticConfig& cfg) {
  if (cfg.num_categories < 2) {
    throw ConfigError("synthetic dataset needs at least 2 categories");
  }
  if (cfg.image_size < kMinCell) {
    throw ConfigError("image_size must be at least 8 pixels");
  }
  const std::size_t cells = grid_cells(cfg.image_size);
  if (cfg.num_categories > cells || cfg.num_categories > kMaxSyntheticCategories) {
    throw ConfigError("too many categories (" + std::to_string(cfg.num_categories) +
                    ") for image size " + std::to_string(cfg.image_size) +
                    ": at most " +
                    std::to_string(std::min(cells, kMaxSyntheticCategories)));
  }
  std::vector<bool> used(cfg.num_categories, false);
  for (const auto& p : cfg.pair_specs) {
    if (p.b >= cfg.num_categories || p.c >= cfg.num_categories || p.b == p.c) {
      throw ConfigError("invalid pair spec category indices");
    }
    if (!(p.cooccur_rate >= 0.0 && p.cooccur_rate <= 1.0)) {
      throw ConfigError("cooccur_rate must lie in [0, 1]");
    }
    if (used[p.b] || used[p.c]) {
      throw ConfigError("pair spec categories must be distinct across specs");
    }
    used[p.b] = used[p.c] = true;
  }
  if (2 * cfg.pair_specs.size() > cells) {
    throw ConfigError("pair categories do not fit in one image of size " +
                    std::to_string(cfg.image_size));
  }
  if (!cfg.size_scale.empty() && cfg.size_scale.size() != cfg.num_categories) {
    throw ConfigError("size_scale must have one entry per category");
  }
  for (double s : cfg.size_scale) {
    if (!(s > 0.0 && s <= 1.0)) throw ConfigError("size_scale entries must be in (0, 1]");
  }
  if (!(cfg.presence_rate >= 0.0 && cfg.presence_rate <= 1.0) ||
      !(cfg.context_rate >= 0.0 && cfg.context_rate <= 1.0)) {
    throw ConfigError("presence rates must lie in [0, 1]");
  }
}

std::string make_id(const std::string& prefix, std::size_t i, std::size_t n) {
  std::ostringstream os;
  const int width = static_cast<int>(std::to_string(std::max<std::size_t>(n, 1) - 1).size());
  os << prefix << '_' << std::setw(std::max(width, 5)) << std::setfill('0') << i;
  return os.str();
}

}  // namespace

ShapeStyle style_for_category(std::size_t category) {
  if (category >= kMaxSyntheticCategories) {
    throw ConfigError("no synthetic style for category " + std::to_string(category));
  }
  return {static_cast<ShapeKind>(category % 8), palette_color(category)};
}

std::size_t grid_cells(int image_size) {
  const auto g = static_cast<std::size_t>(std::max(image_size / kMinCell, 0));
  return g * g;
}

LabeledDataset generate_synthetic(const SyntheticConfig& cfg) {
  validate_config(cfg);
  const std::size_t n = cfg.num_images;
  const std::size_t m = cfg.num_categories;
  Rng rng(cfg.seed);

  std::vector<bool> is_context(m, false);
  for (const auto& p : cfg.pair_specs) is_context[p.c] = true;

  LabelMatrix labels(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (!is_context[j]) labels(i, j) = rng.bernoulli(cfg.presence_rate);
    }
  }
  // Exact co-occurrence counts: among the b-images of each pair, exactly
  // round(rate * n_b) also contain c.
  for (const auto& p : cfg.pair_specs) {
    std::vector<std::size_t> with_b;
    for (std::size_t i = 0; i < n; ++i) {
      if (labels(i, p.b)) {
        with_b.push_back(i);
      } else {
        labels(i, p.c) = rng.bernoulli(cfg.context_rate);
      }
    }
    rng.shuffle(with_b);
    const auto n_co = static_cast<std::size_t>(
        std::llround(p.cooccur_rate * static_cast<double>(with_b.size())));
    for (std::size_t k = 0; k < with_b.size(); ++k) {
      labels(with_b[k], p.c) = k < n_co;
    }
  }
  // Over-capacity rows drop unpaired categories first (pairs fit by config).
  const std::size_t cells = grid_cells(cfg.image_size);
  std::vector<bool> in_pair(m, false);
  for (const auto& p : cfg.pair_specs) in_pair[p.b] = in_pair[p.c] = true;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t present = 0;
    for (std::size_t j = 0; j < m; ++j) present += labels(i, j);
    for (std::size_t j = m; j-- > 0 && present > cells;) {
      if (labels(i, j) && !in_pair[j]) {
        labels(i, j) = 0;
        --present;
      }
    }
  }

  const int grid = cfg.image_size / kMinCell;
  const int cell = cfg.image_size / grid;
  LabeledDataset out;
  out.category_names.reserve(m);
  for (std::size_t j = 0; j < m; ++j) {
    out.category_names.push_back("cat" + std::to_string(j));
  }
  out.labels = labels;
  out.images.reserve(n);
  out.boxes.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.ids.push_back(make_id(cfg.id_prefix, i, n));
    Image image(cfg.image_size, cfg.image_size, 3, 0.0f);
    std::vector<std::size_t> cell_order(static_cast<std::size_t>(grid) * grid);
    std::iota(cell_order.begin(), cell_order.end(), 0);
    rng.shuffle(cell_order);
    std::size_t next_cell = 0;
    for (std::size_t j = 0; j < m; ++j) {
      if (!labels(i, j)) continue;
      const std::size_t slot = cell_order[next_cell++];
      const int cy = static_cast<int>(slot) / grid * cell;
      const int cx = static_cast<int>(slot) % grid * cell;
      const double scale = cfg.size_scale.empty() ? 1.0 : cfg.size_scale[j];
      const int max_size = std::max(3, static_cast<int>(std::lround(cell * scale)) - 1);
      const int min_size = std::max(3, static_cast<int>(std::lround(max_size * 0.7)));
      const int size = min_size + static_cast<int>(rng.index(max_size - min_size + 1));
      const int y0 = cy + static_cast<int>(rng.index(cell - size + 1));
      const int x0 = cx + static_cast<int>(rng.index(cell - size + 1));
      const ShapeStyle style = style_for_category(j);
      for (int dy = 0; dy < size; ++dy) {
        for (int dx = 0; dx < size; ++dx) {
          if (!shape_covers(style.kind, dy, dx, size)) continue;
          for (int ch = 0; ch < 3; ++ch) {
            image.at(y0 + dy, x0 + dx, ch) = style.color[ch];
          }
        }
      }
      out.boxes[i].push_back({j, y0, x0, y0 + size, x0 + size});
    }
    if (cfg.noise_std > 0.0) {
      for (auto& v : image.pixels) {
        v = std::clamp(v + static_cast<float>(cfg.noise_std * rng.normal()), 0.0f, 1.0f);
      }
    }
    quantize_8bit(image);
    out.images.push_back(std::move(image));
  }
  sort_by_id(out);
  out.validate();
  return out;
}

std::vector<std::uint8_t> detect_categories(const Image& image,
                                            std::size_t num_categories,
                                            double color_tolerance,
                                            std::size_t min_pixels) {
  std::vector<std::size_t> hits(num_categories, 0);
  const double tol2 = color_tolerance * color_tolerance;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (std::size_t j = 0; j < num_categories; ++j) {
        const auto color = palette_color(j);
        double d2 = 0.0;
        for (int ch = 0; ch < 3; ++ch) {
          const double d = image.at(y, x, ch) - color[ch];
          d2 += d * d;
        }
        if (d2 <= tol2) ++hits[j];
      }
    }
  }
  std::vector<std::uint8_t> present(num_categories);
  for (std::size_t j = 0; j < num_categories; ++j) {
    present[j] = hits[j] >= min_pixels;
  }
  return present;
}

void save_dataset_dir(const LabeledDataset& dataset,
                      const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  write_matrix_file(dataset, dir / "labels.csv");
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    write_png(dataset.load_image(i), dir / "images" / (dataset.ids[i] + ".png"));
  }
  if (!dataset.boxes.empty()) {
    nlohmann::json doc = nlohmann::json::object();
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      auto& list = doc[dataset.ids[i]] = nlohmann::json::array();
      for (const auto& box : dataset.boxes[i]) {
        list.push_back({box.category, box.y0, box.x0, box.y1, box.x1});
      }
    }
    std::ofstream(dir / "boxes.json") << doc.dump() << '\n';
  }
}

LabeledDataset load_dataset_dir(const std::filesystem::path& dir,
                                bool preload_images) {
  LabeledDataset out = read_matrix_file(dir / "labels.csv");
  for (const auto& id : out.ids) {
    out.image_paths.push_back(dir / "images" / (id + ".png"));
  }
  if (preload_images) {
    out.images.reserve(out.size());
    for (const auto& p : out.image_paths) out.images.push_back(read_png(p));
  }
  if (std::filesystem::exists(dir / "boxes.json")) {
    std::ifstream in(dir / "boxes.json");
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError((dir / "boxes.json").string() + ": " + e.what());
    }
    out.boxes.resize(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (!doc.contains(out.ids[i])) continue;
      for (const auto& b : doc[out.ids[i]]) {
        out.boxes[i].push_back({b[0].get<std::size_t>(), b[1].get<int>(),
                                b[2].get<int>(), b[3].get<int>(), b[4].get<int>()});
      }
    }
  }
  return out;
}

}  // namespace ctxbias::data
