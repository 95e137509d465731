#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctxbias/image.hpp"

namespace ctxbias::data {

enum class Split { train, val, test };

std::string to_string(Split split);
Split split_from_string(const std::string& name);

// Dense N×M binary label matrix, row-major.
class LabelMatrix {
 public:
  LabelMatrix() = default;
  LabelMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), values_(rows * cols, 0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  std::uint8_t operator()(std::size_t i, std::size_t j) const {
    return values_[i * cols_ + j];
  }
  std::uint8_t& operator()(std::size_t i, std::size_t j) {
    return values_[i * cols_ + j];
  }
  std::span<const std::uint8_t> row(std::size_t i) const {
    return {values_.data() + i * cols_, cols_};
  }
  std::span<std::uint8_t> row(std::size_t i) {
    return {values_.data() + i * cols_, cols_};
  }
  std::vector<std::uint8_t> column(std::size_t j) const;

  std::size_t count(std::size_t j) const;

  bool operator==(const LabelMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> values_;
};

// Axis-aligned object extent in image pixels (half-open on y1/x1).
struct ObjectBox {
  std::size_t category = 0;
  int y0 = 0;
  int x0 = 0;
  int y1 = 0;
  int x1 = 0;

  bool contains(int y, int x) const {
    return y >= y0 && y < y1 && x >= x0 && x < x1;
  }
  bool operator==(const ObjectBox&) const = default;
};

// Image records + label matrix. Rows are kept sorted by image id.
// Images are either held in memory or loaded from image_paths on demand.
struct LabeledDataset {
  std::vector<std::string> ids;
  std::vector<std::filesystem::path> image_paths;  // empty or one per id
  std::vector<Image> images;                       // empty or one per id
  std::vector<std::vector<ObjectBox>> boxes;       // empty or one per id
  LabelMatrix labels;
  std::vector<std::string> category_names;
  Split split = Split::train;

  std::size_t size() const { return ids.size(); }
  std::size_t num_categories() const { return category_names.size(); }

  bool has_images() const { return !images.empty() || !image_paths.empty(); }
  Image load_image(std::size_t row) const;

  std::optional<std::size_t> category_index(const std::string& name) const;
  std::optional<std::size_t> row_of(const std::string& id) const;

  // Rows must be given in ascending order to keep ids sorted.
  LabeledDataset subset(std::span<const std::size_t> rows) const;

  // Throws DataError when an invariant does not hold.
  void validate() const;
};

// Reorders all per-item arrays so ids ascend lexicographically.
void sort_by_id(LabeledDataset& dataset);

enum class AnnotationFormat { matrix, coco_json };

struct AnnotationSource {
  AnnotationFormat format = AnnotationFormat::matrix;
  std::filesystem::path path;
  // Directory that image file names are resolved against (optional).
  std::filesystem::path image_root;
};

LabeledDataset load_annotations(const AnnotationSource& source);

// Plain matrix format: "id,<cat1>,...,<catM>" header, then "image_id,0|1,...".
LabeledDataset read_matrix_file(const std::filesystem::path& path);
void write_matrix_file(const LabeledDataset& dataset,
                       const std::filesystem::path& path);

// COCO-style json with images / annotations / categories arrays. The image
// id string is the decimal numeric id; annotation bboxes populate boxes.
// COCO-2014 and COCO-2017 share numeric image ids, so a 2014 file merged with
// a 2017 stuff file aligns by id; resplitting to 2014 train/val membership is
// done by intersecting with the 2014 image list before merging.
LabeledDataset read_coco_json(const std::filesystem::path& path,
                              const std::filesystem::path& image_root = {});

// Element-wise OR over the union vocabulary; categories keep a's order and
// append b's new names.
LabeledDataset merge_label_sources(const LabeledDataset& a,
                                   const LabeledDataset& b);

struct TrainValSplit {
  LabeledDataset train;
  LabeledDataset val;
};

// |train| = round(fraction * N); both sides must be nonempty.
TrainValSplit partition_train_val(const LabeledDataset& dataset,
                                  double fraction, std::uint64_t seed);

// Row-index sets for a (b, c) pair; each set ascends.
struct PairImageSets {
  std::size_t b = 0;
  std::size_t c = 0;
  std::vector<std::size_t> cooccur;
  std::vector<std::size_t> exclusive;
  std::vector<std::size_t> other;
};

PairImageSets image_sets_for_pair(const LabelMatrix& labels, std::size_t b,
                                  std::size_t c);
PairImageSets image_sets_for_pair(const LabeledDataset& dataset, std::size_t b,
                                  std::size_t c);

}  // namespace ctxbias::data
