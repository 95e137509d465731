#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ctxbias/dataset.hpp"
#include "ctxbias/tensor.hpp"

namespace ctxbias::train {

// Images (already preprocessed to a common size) as an N×C×H×W tensor.
model::Tensor4 pack_images(std::span<const data::Image> images);

struct Batch {
  std::vector<std::size_t> rows;  // dataset rows
  model::Tensor4 images;
  Eigen::MatrixXd targets;        // N×M in {0, 1}
  Eigen::MatrixXd weights;        // N×M loss weights, or empty for ones

  std::size_t size() const { return rows.size(); }
  // Positions are indices into this batch.
  Batch select(std::span<const std::size_t> positions) const;
};

// augment_rng == nullptr selects eval preprocessing.
Batch make_batch(const data::LabeledDataset& dataset,
                 std::span<const std::size_t> rows,
                 const data::PreprocessOptions& preprocess, Rng* augment_rng,
                 const Eigen::MatrixXd& row_weights = {});

}  // namespace ctxbias::train
