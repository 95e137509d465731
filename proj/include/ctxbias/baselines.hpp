#pragma once

#include <span>

#include <Eigen/Dense>

#include "ctxbias/bias.hpp"
#include "ctxbias/dataset.hpp"

namespace ctxbias::train {

using bias::BiasedPair;
using data::LabeledDataset;

// Zeroes c wherever b and c co-occur.
LabeledDataset remove_cooccur_labels(const LabeledDataset& dataset,
                                     std::span<const BiasedPair> pairs);

// Drops every row where any pair co-occurs.
LabeledDataset remove_cooccur_images(const LabeledDataset& dataset,
                                     std::span<const BiasedPair> pairs);

// Appends one "<b>&<c>" column per pair holding b∩c and redefines column b
// as b\c. Columns M..M+P−1 follow pair order.
LabeledDataset split_biased_labels(const LabeledDataset& dataset,
                                   std::span<const BiasedPair> pairs);

enum class Recombination { max, sum };

// Folds (M+P)-column scores back to M columns: score(b) combines the b\c and
// b∩c columns (max, or probability sum clamped to 1).
Eigen::MatrixXd recombine_split_scores(const Eigen::MatrixXd& scores,
                                       std::size_t num_categories,
                                       std::span<const BiasedPair> pairs,
                                       Recombination mode = Recombination::max);

// N×M loss weights, 1 everywhere except:
//  weighted: `factor` on class b for rows where b occurs without c;
//  negative penalty: `factor` on class c for rows where b occurs without c.
Eigen::MatrixXd exclusive_b_weights(const LabeledDataset& dataset,
                                    std::span<const BiasedPair> pairs,
                                    double factor);
Eigen::MatrixXd negative_penalty_weights(const LabeledDataset& dataset,
                                         std::span<const BiasedPair> pairs,
                                         double factor);

// Class b's loss on each row weighted by (1 − β)/(1 − βⁿ) of the row's group
// (exclusive / co-occurring / other) for that b. When several pairs share a
// b, the first pair defines the groups.
Eigen::MatrixXd class_balancing_weights(const LabeledDataset& dataset,
                                        std::span<const BiasedPair> pairs,
                                        double beta);

// Throws DataError if a pair references a category outside the vocabulary.
void check_pairs(const LabeledDataset& dataset, std::span<const BiasedPair> pairs);

}  // namespace ctxbias::train
