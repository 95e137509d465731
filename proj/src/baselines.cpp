#include "ctxbias/baselines.hpp"

#include <algorithm>

#include "ctxbias/error.hpp"
#include "ctxbias/losses.hpp"

namespace ctxbias::train {

void check_pairs(const LabeledDataset& dataset,
                 std::span<const BiasedPair> pairs) {
  for (const auto& p : pairs) {
    if (p.b >= dataset.num_categories() || p.c >= dataset.num_categories()) {
      throw DataError("pair (" + std::to_string(p.b) + ", " +
                      std::to_string(p.c) + ") references a missing category");
    }
    if (p.b == p.c) throw DataError("pair categories must differ");
  }
}

LabeledDataset remove_cooccur_labels(const LabeledDataset& dataset,
                                     std::span<const BiasedPair> pairs) {
  check_pairs(dataset, pairs);
  LabeledDataset out = dataset;
  // Decide from the original labels so pair order does not matter.
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (const auto& p : pairs) {
      if (dataset.labels(i, p.b) && dataset.labels(i, p.c)) out.labels(i, p.c) = 0;
    }
  }
  return out;
}

LabeledDataset remove_cooccur_images(const LabeledDataset& dataset,
                                     std::span<const BiasedPair> pairs) {
  check_pairs(dataset, pairs);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const bool flagged = std::any_of(pairs.begin(), pairs.end(), [&](const auto& p) {
      return dataset.labels(i, p.b) && dataset.labels(i, p.c);
    });
    if (!flagged) keep.push_back(i);
  }
  return dataset.subset(keep);
}

LabeledDataset split_biased_labels(const LabeledDataset& dataset,
                                   std::span<const BiasedPair> pairs) {
  check_pairs(dataset, pairs);
  const std::size_t m = dataset.num_categories();
  LabeledDataset out = dataset;
  for (const auto& p : pairs) {
    out.category_names.push_back(dataset.category_names[p.b] + "&" +
                                 dataset.category_names[p.c]);
  }
  out.labels = data::LabelMatrix(dataset.size(), m + pairs.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (std::size_t j = 0; j < m; ++j) out.labels(i, j) = dataset.labels(i, j);
  }
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto& p = pairs[k];
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      const bool both = dataset.labels(i, p.b) && dataset.labels(i, p.c);
      out.labels(i, m + k) = both;
      if (both) out.labels(i, p.b) = 0;
    }
  }
  return out;
}

Eigen::MatrixXd recombine_split_scores(const Eigen::MatrixXd& scores,
                                       std::size_t num_categories,
                                       std::span<const BiasedPair> pairs,
                                       Recombination mode) {
  const auto m = static_cast<Eigen::Index>(num_categories);
  if (scores.cols() != m + static_cast<Eigen::Index>(pairs.size())) {
    throw DataError("split-biased score matrix has unexpected column count");
  }
  Eigen::MatrixXd out = scores.leftCols(m);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto b = static_cast<Eigen::Index>(pairs[k].b);
    const auto extra = m + static_cast<Eigen::Index>(k);
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
      out(i, b) = mode == Recombination::max
                      ? std::max(out(i, b), scores(i, extra))
                      : std::min(1.0, out(i, b) + scores(i, extra));
    }
  }
  return out;
}

namespace {

Eigen::MatrixXd exclusive_weights(const LabeledDataset& dataset,
                                  std::span<const BiasedPair> pairs,
                                  double factor, bool on_context) {
  check_pairs(dataset, pairs);
  Eigen::MatrixXd w = Eigen::MatrixXd::Ones(dataset.size(), dataset.num_categories());
  for (const auto& p : pairs) {
    const auto col = static_cast<Eigen::Index>(on_context ? p.c : p.b);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      if (dataset.labels(i, p.b) && !dataset.labels(i, p.c)) {
        auto& v = w(static_cast<Eigen::Index>(i), col);
        v = std::max(v, factor);
      }
    }
  }
  return w;
}

}  // namespace

Eigen::MatrixXd exclusive_b_weights(const LabeledDataset& dataset,
                                    std::span<const BiasedPair> pairs,
                                    double factor) {
  return exclusive_weights(dataset, pairs, factor, false);
}

Eigen::MatrixXd negative_penalty_weights(const LabeledDataset& dataset,
                                         std::span<const BiasedPair> pairs,
                                         double factor) {
  return exclusive_weights(dataset, pairs, factor, true);
}

Eigen::MatrixXd class_balancing_weights(const LabeledDataset& dataset,
                                        std::span<const BiasedPair> pairs,
                                        double beta) {
  check_pairs(dataset, pairs);
  Eigen::MatrixXd w = Eigen::MatrixXd::Ones(dataset.size(), dataset.num_categories());
  std::vector<bool> done(dataset.num_categories(), false);
  for (const auto& p : pairs) {
    if (done[p.b]) continue;
    done[p.b] = true;
    const auto sets = data::image_sets_for_pair(dataset, p.b, p.c);
    const auto col = static_cast<Eigen::Index>(p.b);
    for (const auto* group : {&sets.exclusive, &sets.cooccur, &sets.other}) {
      if (group->empty()) continue;
      const double weight = class_balance_weight(beta, group->size());
      for (auto i : *group) w(static_cast<Eigen::Index>(i), col) = weight;
    }
  }
  return w;
}

}  // namespace ctxbias::train
