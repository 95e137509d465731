#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ctxbias/tensor.hpp"

namespace ctxbias::model {

// Final linear layer: scores = Wᵀx (+ bias). W is D×M.
struct ClassifierHead {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
  bool use_bias = true;

  ClassifierHead() = default;
  ClassifierHead(int feature_dim, int num_classes, bool with_bias = true)
      : weight(Eigen::MatrixXd::Zero(feature_dim, num_classes)),
        bias(Eigen::VectorXd::Zero(num_classes)),
        use_bias(with_bias) {}

  int feature_dim() const { return static_cast<int>(weight.rows()); }
  int num_classes() const { return static_cast<int>(weight.cols()); }
};

Eigen::VectorXd forward_scores(const Eigen::VectorXd& x,
                               const ClassifierHead& head);
// Row-batched form: x is N×D, result N×M.
Eigen::MatrixXd forward_scores(const Eigen::MatrixXd& x,
                               const ClassifierHead& head);

// Spatial mean of each channel of every sample: N×D.
Eigen::MatrixXd global_average_pool(const Tensor4& features);

// Ring buffer of the last `capacity` batch means of the context features.
// mean() is the zero vector until the first push.
class XsHistory {
 public:
  XsHistory() = default;
  XsHistory(int dim, std::size_t capacity = 10);

  void push(const Eigen::VectorXd& batch_mean);
  const Eigen::VectorXd& mean() const { return mean_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  int dim() const { return static_cast<int>(mean_.size()); }
  const std::deque<Eigen::VectorXd>& entries() const { return entries_; }

 private:
  std::size_t capacity_ = 10;
  std::deque<Eigen::VectorXd> entries_;
  Eigen::VectorXd mean_;
};

enum class SplitMode { middle, random };

// Row partition of W into the object subspace (o_rows) and the context
// subspace (s_rows), plus the running context-feature mean.
struct FeatureSplit {
  std::vector<std::size_t> o_rows;
  std::vector<std::size_t> s_rows;
  XsHistory history;
};

struct SplitClassifierHead {
  ClassifierHead head;
  FeatureSplit split;

  Eigen::MatrixXd w_o() const;
  Eigen::MatrixXd w_s() const;
};

// middle: o_rows = {0..d_o-1}; random: seeded uniform sample of size d_o.
FeatureSplit make_feature_split(int feature_dim, SplitMode mode, std::size_t d_o,
                                std::uint64_t seed,
                                std::size_t history_capacity = 10);
SplitClassifierHead split_head(const ClassifierHead& head, SplitMode mode,
                               std::size_t d_o, std::uint64_t seed);

// Gathers the given rows of each column vector (or matrix rows).
Eigen::VectorXd gather(const Eigen::VectorXd& v, std::span<const std::size_t> rows);
Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m,
                            std::span<const std::size_t> rows);
Eigen::MatrixXd gather_cols(const Eigen::MatrixXd& m,
                            std::span<const std::size_t> cols);

struct SplitScores {
  Eigen::MatrixXd plain;        // W_oᵀx_o + W_sᵀx_s (+ bias)
  Eigen::MatrixXd substituted;  // W_oᵀx_o + W_sᵀx̄_s (+ bias)
};

// x is N×D. Both score sets are returned for every sample; the caller picks
// per sample.
SplitScores feature_split_forward(const Eigen::MatrixXd& x,
                                  const ClassifierHead& head,
                                  const FeatureSplit& split);

// CAM(r)[y, x] = Σ_d W[d, r]·F[y, x, d], optionally min-max normalized to
// [0, 1] (a constant map normalizes to zeros). `rows` restricts the sum to a
// channel subset (W_o / W_s maps).
Eigen::MatrixXd compute_cam(const FeatureMapView& features,
                            const Eigen::MatrixXd& weight, std::size_t r,
                            bool normalize = true,
                            std::optional<std::span<const std::size_t>> rows =
                                std::nullopt);

// Min-max normalization helper shared with the CAM loss backward pass.
struct NormalizedCam {
  Eigen::MatrixXd raw;
  Eigen::MatrixXd normalized;
  Eigen::Index argmin = 0;  // flat (row-major) indices
  Eigen::Index argmax = 0;
  double range = 0.0;       // 0 when the map is constant
};
NormalizedCam normalize_cam(const Eigen::MatrixXd& raw);

}  // namespace ctxbias::model
