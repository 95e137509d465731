#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ctxbias/dataset.hpp"

namespace ctxbias::bias {

// N×M prediction probabilities aligned row-for-row with a dataset.
struct PredictionMatrix {
  Eigen::MatrixXd scores;

  std::size_t rows() const { return static_cast<std::size_t>(scores.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(scores.cols()); }

  // Throws DataError on shape mismatch, non-finite or out-of-range entries.
  void validate_against(const data::LabeledDataset& dataset) const;
};

struct BiasedPair {
  std::size_t b = 0;
  std::size_t c = 0;
  double bias_value = 0.0;
  data::PairImageSets sets;
};

// Mean of scores(i, b) over rows. Throws DataError on empty rows.
double mean_prediction(const PredictionMatrix& preds,
                       std::span<const std::size_t> rows, std::size_t b);

// Ratio of the mean score of b on images with z to that on images with b but
// without z. nullopt when either set is empty or the denominator mean is 0.
std::optional<double> bias(const PredictionMatrix& preds,
                           const data::LabeledDataset& dataset, std::size_t b,
                           std::size_t z);

struct PairSelection {
  std::vector<BiasedPair> pairs;
  // Set when fewer than K categories had an eligible context.
  bool fewer_than_requested = false;
};

// For each candidate b, picks the context z with the highest bias among those
// co-occurring with b at least cooccur_threshold of the time (ties → lower
// index), then keeps the K most biased b (ties → lower b).
PairSelection identify_pairs(
    const PredictionMatrix& preds, const data::LabeledDataset& dataset,
    std::size_t k, double cooccur_threshold,
    const std::optional<std::vector<std::size_t>>& candidates = std::nullopt);

// [{b, c, b_name, c_name, bias, counts: {cooccur, exclusive, other}}]
void write_pairs_json(std::span<const BiasedPair> pairs,
                      const data::LabeledDataset& dataset,
                      const std::filesystem::path& path);

// Accepts b/c as indices or category names. Image sets are recomputed on the
// given dataset; a missing bias value reads as 0 (externally supplied lists).
std::vector<BiasedPair> read_pairs_json(const std::filesystem::path& path,
                                        const data::LabeledDataset& dataset);

// Rebuilds each pair's image sets on another dataset with the same vocabulary.
std::vector<BiasedPair> rebind_pairs(std::span<const BiasedPair> pairs,
                                     const data::LabeledDataset& dataset);

}  // namespace ctxbias::bias
