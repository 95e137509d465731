#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxbias/dataset.hpp"
#include "ctxbias/synthetic.hpp"
#include "ctxbias/trainer.hpp"

namespace ctxbias::cli {

enum class DataSource { synthetic, annotations };

struct DataConfig {
  DataSource source = DataSource::synthetic;
  data::SyntheticConfig synthetic;
  std::size_t test_images = 500;
  std::optional<double> test_cooccur_rate;  // defaults to each pair's train rate
  // Annotation files for each split are merged (label union per image).
  std::vector<data::AnnotationSource> train_sources;
  std::vector<data::AnnotationSource> test_sources;
  double val_fraction = 0.2;  // 0 disables the validation split
};

struct PairsConfig {
  std::string source = "computed";  // or "file"
  std::filesystem::path file;
  std::size_t k = 5;
  double threshold = 0.2;
  std::string split = "val";  // falls back to train without a val split
  std::optional<std::vector<std::string>> candidates;
};

struct EvalConfig {
  eval::MetricKind metric = eval::MetricKind::map;
  std::vector<std::string> non_biased;
};

struct AblationConfig {
  std::vector<double> lambda2;
  std::vector<std::size_t> xo_size;
};

struct ExperimentConfig {
  nlohmann::json document;  // effective config, overrides applied
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;
  DataConfig data;
  data::PreprocessOptions preprocess;
  bool augment = true;
  nlohmann::json backbone;
  std::string method = "feature_split";
  train::EpochSelection selection = train::EpochSelection::last;
  PairsConfig pairs;
  EvalConfig evaluation;
  AblationConfig ablation;

  // Defaults for `method`, then training.common, then training.<method>.
  train::MethodSpec method_spec(train::Method method) const;
};

// Applies "a.b.c=value"; value is parsed as JSON when possible, else taken
// as a string.
void apply_override(nlohmann::json& document, const std::string& assignment);

// Relative output directories resolve against $CTXBIAS_OUTPUT_ROOT when set.
ExperimentConfig parse_config(const nlohmann::json& document);
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides = {});

inline constexpr const char* kOutputRootEnv = "CTXBIAS_OUTPUT_ROOT";

}  // namespace ctxbias::cli
