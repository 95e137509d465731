#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ctxbias/bias.hpp"
#include "ctxbias/dataset.hpp"
#include "ctxbias/network.hpp"

namespace ctxbias::eval {

using bias::BiasedPair;
using bias::PredictionMatrix;

// Non-interpolated AP: mean over positives of precision at their rank.
// Ranking is by descending score, ties resolved by input position (callers
// pass rows in ascending image-id order). nullopt when there are no positives.
std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const std::uint8_t> labels);

// Fraction of b-positive rows (among `rows`) whose b score ranks in that
// row's top k category scores; ties go to the lower category index.
std::optional<double> top_k_recall(const Eigen::MatrixXd& scores,
                                   const data::LabelMatrix& labels,
                                   std::span<const std::size_t> rows,
                                   std::size_t b, std::size_t k = 3);

enum class DistributionKind { exclusive, cooccur };

// exclusive: exclusive ∪ other; cooccur: cooccur ∪ other. Ascending rows.
std::vector<std::size_t> build_distribution(const data::PairImageSets& sets,
                                            DistributionKind kind);

enum class MetricKind { map, top3_recall };

std::string to_string(MetricKind kind);
MetricKind metric_from_string(const std::string& name);

struct PairResult {
  std::size_t b = 0;
  std::size_t c = 0;
  std::string b_name;
  std::string c_name;
  std::optional<double> exclusive;
  std::optional<double> cooccur;
};

struct EvalReport {
  MetricKind metric = MetricKind::map;
  std::vector<PairResult> per_pair;
  std::optional<double> exclusive_mean;
  std::optional<double> cooccur_mean;
  std::optional<double> all_mean;
  std::optional<double> non_biased_mean;
  // Metric per category on the full set (nullopt when no positives).
  std::vector<std::optional<double>> per_category;
  std::vector<std::string> warnings;
};

// Per-pair metrics on both distributions plus whole-set aggregates.
EvalReport evaluate(const PredictionMatrix& preds,
                    const data::LabeledDataset& dataset,
                    std::span<const BiasedPair> pairs, MetricKind metric,
                    const std::optional<std::vector<std::size_t>>& non_biased =
                        std::nullopt);

// Sigmoid scores of the network over the dataset (eval preprocessing).
PredictionMatrix predict(model::Network& network,
                         const data::LabeledDataset& dataset,
                         const data::PreprocessOptions& preprocess,
                         std::size_t batch_size = 64);

nlohmann::json report_to_json(const EvalReport& report);
void write_report_json(const EvalReport& report, const std::filesystem::path& path);
// One row per pair: b,c,exclusive,cooccur (empty cell when undefined).
void write_report_csv(const EvalReport& report, const std::filesystem::path& path);

struct CosineReport {
  std::optional<double> mean;
  std::vector<std::pair<std::size_t, double>> per_category;
  std::vector<std::size_t> excluded;  // zero-norm columns
};

// Mean over the pairs' b of cos(W_o[:, b], W_s[:, b]). Without a split, a
// seeded random half split of the rows is applied first.
CosineReport cosine_similarity_report(const model::ClassifierHead& head,
                                      const std::optional<model::FeatureSplit>& split,
                                      std::span<const BiasedPair> pairs,
                                      std::uint64_t seed);

struct CrossCategoryResult {
  std::string name;
  std::size_t model_column = 0;
  std::size_t external_column = 0;
  std::optional<double> ap;
};

struct CrossDatasetReport {
  std::vector<CrossCategoryResult> categories;
  std::optional<double> mean;
};

// preds: external rows × model categories. Evaluates every pair's b whose
// name also appears in the external vocabulary, on the full external set.
CrossDatasetReport cross_dataset_evaluate(
    const PredictionMatrix& preds,
    std::span<const std::string> model_categories,
    const data::LabeledDataset& external, std::span<const BiasedPair> pairs);

}  // namespace ctxbias::eval
