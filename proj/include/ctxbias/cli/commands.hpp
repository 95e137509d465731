#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ctxbias/cli/config.hpp"

namespace ctxbias::cli {

// Layout of a run directory.
struct RunPaths {
  std::filesystem::path root;

  explicit RunPaths(std::filesystem::path r) : root(std::move(r)) {}
  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path data() const { return root / "data"; }
  std::filesystem::path manifest() const { return root / "data" / "manifest.json"; }
  std::filesystem::path split(data::Split s) const { return data() / data::to_string(s); }
  std::filesystem::path checkpoints() const { return root / "checkpoints"; }
  std::filesystem::path checkpoint(const std::string& method) const {
    return checkpoints() / (method + ".ckpt");
  }
  std::filesystem::path history() const { return root / "history.jsonl"; }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path pairs() const { return reports() / "pairs.json"; }
  std::filesystem::path timing() const { return reports() / "timing.json"; }
  std::filesystem::path figures() const { return root / "figures"; }
};

std::string sha256_file(const std::filesystem::path& path);
std::string sha256_bytes(const std::string& bytes);

// Loads a split written by prepare-data; nullopt when it does not exist.
std::optional<data::LabeledDataset> load_split(const RunPaths& paths, data::Split split);

// Returns false when the existing data already matched the manifest.
bool cmd_prepare_data(const ExperimentConfig& cfg, std::ostream& log);

void cmd_find_pairs(const ExperimentConfig& cfg, std::ostream& log);

struct TrainRequest {
  std::string method;
  std::optional<std::filesystem::path> stage1;  // defaults to checkpoints/standard.ckpt
  std::optional<std::filesystem::path> resume;
  int stop_after_epoch = 0;
};
void cmd_train(const ExperimentConfig& cfg, const TrainRequest& request, std::ostream& log);

// Empty `methods` evaluates every checkpoint present.
void cmd_evaluate(const ExperimentConfig& cfg, std::vector<std::string> methods,
                  std::ostream& log);

void cmd_ablate(const ExperimentConfig& cfg, std::ostream& log);

struct CamRequest {
  std::string method;
  std::vector<std::string> ids;
  std::vector<std::string> categories;  // names or indices
};
void cmd_cam_export(const ExperimentConfig& cfg, const CamRequest& request, std::ostream& log);

// Writes <out>/figures/{exclusive,cooccur}.svg and <out>/reports/summary.md.
void cmd_report(const std::vector<std::filesystem::path>& runs,
                const std::filesystem::path& out, std::ostream& log);

}  // namespace ctxbias::cli
