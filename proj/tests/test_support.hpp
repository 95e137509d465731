#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ctxbias/dataset.hpp"
#include "ctxbias/rng.hpp"

namespace testing {

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    ctxbias::Rng rng(std::hash<std::string>{}(tag) ^ reinterpret_cast<std::uintptr_t>(this));
    path_ = std::filesystem::temp_directory_path() /
            ("ctxbias_" + tag + "_" + std::to_string(rng.next() % 1000000000ULL));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Label-only dataset; category names c0, c1, ...
inline ctxbias::data::LabeledDataset make_dataset(
    const std::vector<std::vector<int>>& rows) {
  ctxbias::data::LabeledDataset ds;
  const std::size_t m = rows.empty() ? 0 : rows.front().size();
  ds.labels = ctxbias::data::LabelMatrix(rows.size(), m);
  for (std::size_t j = 0; j < m; ++j) ds.category_names.push_back("c" + std::to_string(j));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "img%04zu", i);
    ds.ids.push_back(id);
    for (std::size_t j = 0; j < m; ++j) ds.labels(i, j) = static_cast<std::uint8_t>(rows[i][j]);
  }
  return ds;
}

inline ctxbias::data::LabeledDataset dataset_from_labels(const ctxbias::data::LabelMatrix& y) {
  std::vector<std::vector<int>> rows(y.rows(), std::vector<int>(y.cols()));
  for (std::size_t i = 0; i < y.rows(); ++i) {
    for (std::size_t j = 0; j < y.cols(); ++j) rows[i][j] = y(i, j);
  }
  return make_dataset(rows);
}

}  // namespace testing
