#include "ctxbias/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "ctxbias/error.hpp"
#include "ctxbias/rng.hpp"

namespace ctxbias::data {

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split '" + name + "'");
}

std::vector<std::uint8_t> LabelMatrix::column(std::size_t j) const {
  std::vector<std::uint8_t> out(rows_);
  for (std::size_t i = 0; i < rows_; ++i) out[i] = (*this)(i, j);
  return out;
}

std::size_t LabelMatrix::count(std::size_t j) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < rows_; ++i) n += (*this)(i, j);
  return n;
}

Image LabeledDataset::load_image(std::size_t row) const {
  if (!images.empty()) return images.at(row);
  if (!image_paths.empty()) return read_png(image_paths.at(row));
  throw DataError("dataset has no images for id " + ids.at(row));
}

std::optional<std::size_t> LabeledDataset::category_index(
    const std::string& name) const {
  auto it = std::find(category_names.begin(), category_names.end(), name);
  if (it == category_names.end()) return std::nullopt;
  return static_cast<std::size_t>(it - category_names.begin());
}

std::optional<std::size_t> LabeledDataset::row_of(const std::string& id) const {
  auto it = std::lower_bound(ids.begin(), ids.end(), id);
  if (it == ids.end() || *it != id) return std::nullopt;
  return static_cast<std::size_t>(it - ids.begin());
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> rows) const {
  LabeledDataset out;
  out.category_names = category_names;
  out.split = split;
  out.labels = LabelMatrix(rows.size(), num_categories());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t r = rows[k];
    out.ids.push_back(ids.at(r));
    if (!image_paths.empty()) out.image_paths.push_back(image_paths[r]);
    if (!images.empty()) out.images.push_back(images[r]);
    if (!boxes.empty()) out.boxes.push_back(boxes[r]);
    std::copy(labels.row(r).begin(), labels.row(r).end(),
              out.labels.row(k).begin());
  }
  return out;
}

void LabeledDataset::validate() const {
  if (category_names.size() < 2) {
    throw DataError("dataset needs at least 2 categories");
  }
  std::unordered_set<std::string> seen;
  for (const auto& name : category_names) {
    if (!seen.insert(name).second) {
      throw DataError("duplicate category name '" + name + "'");
    }
  }
  if (labels.rows() != ids.size() || labels.cols() != category_names.size()) {
    throw DataError("label matrix shape does not match dataset");
  }
  if (!image_paths.empty() && image_paths.size() != ids.size()) {
    throw DataError("image path count does not match ids");
  }
  if (!images.empty() && images.size() != ids.size()) {
    throw DataError("image count does not match ids");
  }
  if (!boxes.empty() && boxes.size() != ids.size()) {
    throw DataError("box list count does not match ids");
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0 && !(ids[i - 1] < ids[i])) {
      throw DataError("ids not strictly ascending at '" + ids[i] + "'");
    }
    for (auto v : labels.row(i)) {
      if (v > 1) throw DataError("non-binary label for id " + ids[i]);
    }
  }
}

void sort_by_id(LabeledDataset& dataset) {
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    return dataset.ids[a] < dataset.ids[b];
  });
  dataset = dataset.subset(order);
}

LabeledDataset load_annotations(const AnnotationSource& source) {
  LabeledDataset out;
  switch (source.format) {
    case AnnotationFormat::matrix:
      out = read_matrix_file(source.path);
      if (!source.image_root.empty()) {
        for (const auto& id : out.ids) {
          out.image_paths.push_back(source.image_root / (id + ".png"));
        }
      }
      break;
    case AnnotationFormat::coco_json:
      out = read_coco_json(source.path, source.image_root);
      break;
  }
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace

LabeledDataset read_matrix_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open matrix file " + path.string());

  std::string line;
  if (!std::getline(in, line)) {
    throw ParseError(path.string() + ": empty matrix file");
  }
  strip_cr(line);
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) {
    line.erase(0, 3);
  }
  auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "id") {
    throw ParseError(path.string() +
                     ": header must be 'id,<cat1>,...,<catM>' with M >= 2");
  }

  LabeledDataset out;
  out.category_names.assign(header.begin() + 1, header.end());
  const std::size_t m = out.category_names.size();

  std::vector<std::vector<std::uint8_t>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (fields.size() != m + 1) {
      throw ParseError(where + ": record '" + fields[0] + "' has " +
                       std::to_string(fields.size() - 1) + " labels, expected " +
                       std::to_string(m));
    }
    std::vector<std::uint8_t> row(m);
    for (std::size_t j = 0; j < m; ++j) {
      if (fields[j + 1] == "0") {
        row[j] = 0;
      } else if (fields[j + 1] == "1") {
        row[j] = 1;
      } else {
        throw ParseError(where + ": record '" + fields[0] +
                         "' has non-binary value '" + fields[j + 1] +
                         "' for category " + out.category_names[j]);
      }
    }
    out.ids.push_back(fields[0]);
    rows.push_back(std::move(row));
  }

  out.labels = LabelMatrix(rows.size(), m);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i].begin(), rows[i].end(), out.labels.row(i).begin());
  }
  sort_by_id(out);
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out.ids[i - 1] == out.ids[i]) {
      throw ParseError(path.string() + ": duplicate image id '" + out.ids[i] +
                       "'");
    }
  }
  try {
    out.validate();
  } catch (const DataError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return out;
}

void write_matrix_file(const LabeledDataset& dataset,
                       const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write matrix file " + path.string());
  out << "id";
  for (const auto& name : dataset.category_names) out << ',' << name;
  out << '\n';
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    out << dataset.ids[i];
    for (auto v : dataset.labels.row(i)) out << ',' << static_cast<int>(v);
    out << '\n';
  }
}

LabeledDataset read_coco_json(const std::filesystem::path& path,
                              const std::filesystem::path& image_root) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open annotation file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  for (const char* key : {"images", "annotations", "categories"}) {
    if (!doc.contains(key) || !doc[key].is_array()) {
      throw ParseError(path.string() + ": missing array '" + key + "'");
    }
  }

  LabeledDataset out;
  std::map<std::int64_t, std::size_t> category_column;
  for (std::size_t k = 0; k < doc["categories"].size(); ++k) {
    const auto& cat = doc["categories"][k];
    if (!cat.contains("id") || !cat.contains("name")) {
      throw ParseError(path.string() + ": category record " +
                       std::to_string(k) + " lacks id/name");
    }
    const auto id = cat["id"].get<std::int64_t>();
    if (!category_column.emplace(id, out.category_names.size()).second) {
      throw ParseError(path.string() + ": duplicate category id " +
                       std::to_string(id));
    }
    out.category_names.push_back(cat["name"].get<std::string>());
  }

  std::map<std::string, std::size_t> row_of_id;
  std::vector<std::string> file_names;
  for (std::size_t k = 0; k < doc["images"].size(); ++k) {
    const auto& img = doc["images"][k];
    if (!img.contains("id")) {
      throw ParseError(path.string() + ": image record " + std::to_string(k) +
                       " lacks id");
    }
    const std::string id = img["id"].is_string()
                               ? img["id"].get<std::string>()
                               : std::to_string(img["id"].get<std::int64_t>());
    if (!row_of_id.emplace(id, out.ids.size()).second) {
      throw ParseError(path.string() + ": duplicate image id " + id);
    }
    out.ids.push_back(id);
    file_names.push_back(img.value("file_name", id + ".png"));
  }

  out.labels = LabelMatrix(out.ids.size(), out.category_names.size());
  out.boxes.resize(out.ids.size());
  bool any_box = false;
  for (std::size_t k = 0; k < doc["annotations"].size(); ++k) {
    const auto& ann = doc["annotations"][k];
    if (!ann.contains("image_id") || !ann.contains("category_id")) {
      throw ParseError(path.string() + ": annotation record " +
                       std::to_string(k) + " lacks image_id/category_id");
    }
    const std::string image_id =
        ann["image_id"].is_string()
            ? ann["image_id"].get<std::string>()
            : std::to_string(ann["image_id"].get<std::int64_t>());
    const auto row = row_of_id.find(image_id);
    if (row == row_of_id.end()) {
      throw ParseError(path.string() + ": annotation record " +
                       std::to_string(k) + " references unknown image " +
                       image_id);
    }
    const auto cat_id = ann["category_id"].get<std::int64_t>();
    const auto col = category_column.find(cat_id);
    if (col == category_column.end()) {
      throw DataError(path.string() + ": annotation record " +
                      std::to_string(k) + " references unknown category " +
                      std::to_string(cat_id));
    }
    out.labels(row->second, col->second) = 1;
    if (ann.contains("bbox") && ann["bbox"].is_array() &&
        ann["bbox"].size() == 4) {
      const auto& bb = ann["bbox"];
      const double x = bb[0].get<double>(), y = bb[1].get<double>();
      const double w = bb[2].get<double>(), h = bb[3].get<double>();
      out.boxes[row->second].push_back(
          {col->second, static_cast<int>(y), static_cast<int>(x),
           static_cast<int>(std::ceil(y + h)), static_cast<int>(std::ceil(x + w))});
      any_box = true;
    }
  }
  if (!any_box) out.boxes.clear();
  if (!image_root.empty()) {
    for (const auto& name : file_names) out.image_paths.push_back(image_root / name);
  }
  sort_by_id(out);
  try {
    out.validate();
  } catch (const DataError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return out;
}

LabeledDataset merge_label_sources(const LabeledDataset& a,
                                   const LabeledDataset& b) {
  if (a.ids != b.ids) {
    std::vector<std::string> only_a, only_b;
    std::set_difference(a.ids.begin(), a.ids.end(), b.ids.begin(), b.ids.end(),
                        std::back_inserter(only_a));
    std::set_difference(b.ids.begin(), b.ids.end(), a.ids.begin(), a.ids.end(),
                        std::back_inserter(only_b));
    std::string msg = "image id sets differ; only in first: {";
    for (std::size_t i = 0; i < only_a.size(); ++i) {
      msg += (i ? "," : "") + only_a[i];
    }
    msg += "}; only in second: {";
    for (std::size_t i = 0; i < only_b.size(); ++i) {
      msg += (i ? "," : "") + only_b[i];
    }
    throw DataError(msg + "}");
  }

  LabeledDataset out = a;
  std::vector<std::size_t> column_of_b(b.num_categories());
  for (std::size_t j = 0; j < b.num_categories(); ++j) {
    if (auto idx = out.category_index(b.category_names[j])) {
      column_of_b[j] = *idx;
    } else {
      column_of_b[j] = out.category_names.size();
      out.category_names.push_back(b.category_names[j]);
    }
  }
  out.labels = LabelMatrix(a.size(), out.num_categories());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a.num_categories(); ++j) {
      out.labels(i, j) = a.labels(i, j);
    }
    for (std::size_t j = 0; j < b.num_categories(); ++j) {
      out.labels(i, column_of_b[j]) |= b.labels(i, j);
    }
  }
  if (!b.boxes.empty()) {
    if (out.boxes.empty()) out.boxes.resize(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      for (auto box : b.boxes[i]) {
        box.category = column_of_b[box.category];
        out.boxes[i].push_back(box);
      }
    }
  }
  if (out.image_paths.empty()) out.image_paths = b.image_paths;
  if (out.images.empty()) out.images = b.images;
  return out;
}

TrainValSplit partition_train_val(const LabeledDataset& dataset,
                                  double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw DataError("split fraction must lie strictly between 0 and 1");
  }
  const std::size_t n = dataset.size();
  const auto n_train =
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train == n) {
    throw DataError("split of " + std::to_string(n) + " items at fraction " +
                    std::to_string(fraction) + " leaves one side empty");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::size_t> train_rows(order.begin(), order.begin() + n_train);
  std::vector<std::size_t> val_rows(order.begin() + n_train, order.end());
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(val_rows.begin(), val_rows.end());

  TrainValSplit out{dataset.subset(train_rows), dataset.subset(val_rows)};
  out.train.split = Split::train;
  out.val.split = Split::val;
  return out;
}

PairImageSets image_sets_for_pair(const LabelMatrix& labels, std::size_t b,
                                  std::size_t c) {
  if (b == c) throw DataError("pair categories must differ");
  if (b >= labels.cols() || c >= labels.cols()) {
    throw DataError("pair category index out of range");
  }
  PairImageSets sets{b, c, {}, {}, {}};
  for (std::size_t i = 0; i < labels.rows(); ++i) {
    if (!labels(i, b)) {
      sets.other.push_back(i);
    } else if (labels(i, c)) {
      sets.cooccur.push_back(i);
    } else {
      sets.exclusive.push_back(i);
    }
  }
  return sets;
}

PairImageSets image_sets_for_pair(const LabeledDataset& dataset, std::size_t b,
                                  std::size_t c) {
  return image_sets_for_pair(dataset.labels, b, c);
}

}  // namespace ctxbias::data
