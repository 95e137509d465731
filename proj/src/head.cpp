#include "ctxbias/head.hpp"

#include <algorithm>
#include <numeric>

#include "ctxbias/error.hpp"
#include "ctxbias/rng.hpp"

namespace ctxbias::model {

Eigen::VectorXd forward_scores(const Eigen::VectorXd& x,
                               const ClassifierHead& head) {
  if (x.size() != head.weight.rows()) {
    throw Error("feature dimension " + std::to_string(x.size()) +
                " does not match head input " +
                std::to_string(head.weight.rows()));
  }
  Eigen::VectorXd y = head.weight.transpose() * x;
  if (head.use_bias) y += head.bias;
  return y;
}

Eigen::MatrixXd forward_scores(const Eigen::MatrixXd& x,
                               const ClassifierHead& head) {
  if (x.cols() != head.weight.rows()) {
    throw Error("feature dimension " + std::to_string(x.cols()) +
                " does not match head input " +
                std::to_string(head.weight.rows()));
  }
  Eigen::MatrixXd y = x * head.weight;
  if (head.use_bias) y.rowwise() += head.bias.transpose();
  return y;
}

Eigen::MatrixXd global_average_pool(const Tensor4& features) {
  Eigen::MatrixXd pooled(features.n, features.c);
  const int hw = features.h * features.w;
  for (int i = 0; i < features.n; ++i) {
    const double* s = features.sample(i);
    for (int d = 0; d < features.c; ++d) {
      double sum = 0.0;
      for (int k = 0; k < hw; ++k) sum += s[d * hw + k];
      pooled(i, d) = sum / hw;
    }
  }
  return pooled;
}

XsHistory::XsHistory(int dim, std::size_t capacity)
    : capacity_(capacity), mean_(Eigen::VectorXd::Zero(dim)) {
  if (capacity == 0) throw Error("history capacity must be positive");
}

void XsHistory::push(const Eigen::VectorXd& batch_mean) {
  if (batch_mean.size() != mean_.size()) {
    throw Error("history vector dimension mismatch");
  }
  entries_.push_back(batch_mean);
  if (entries_.size() > capacity_) entries_.pop_front();
  mean_.setZero();
  for (const auto& e : entries_) mean_ += e;
  mean_ /= static_cast<double>(entries_.size());
}

Eigen::VectorXd gather(const Eigen::VectorXd& v,
                       std::span<const std::size_t> rows) {
  Eigen::VectorXd out(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out(static_cast<Eigen::Index>(k)) = v(static_cast<Eigen::Index>(rows[k]));
  }
  return out;
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m,
                            std::span<const std::size_t> rows) {
  Eigen::MatrixXd out(rows.size(), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.row(static_cast<Eigen::Index>(k)) = m.row(static_cast<Eigen::Index>(rows[k]));
  }
  return out;
}

Eigen::MatrixXd gather_cols(const Eigen::MatrixXd& m,
                            std::span<const std::size_t> cols) {
  Eigen::MatrixXd out(m.rows(), cols.size());
  for (std::size_t k = 0; k < cols.size(); ++k) {
    out.col(static_cast<Eigen::Index>(k)) = m.col(static_cast<Eigen::Index>(cols[k]));
  }
  return out;
}

Eigen::MatrixXd SplitClassifierHead::w_o() const {
  return gather_rows(head.weight, split.o_rows);
}

Eigen::MatrixXd SplitClassifierHead::w_s() const {
  return gather_rows(head.weight, split.s_rows);
}

FeatureSplit make_feature_split(int feature_dim, SplitMode mode, std::size_t d_o,
                                std::uint64_t seed,
                                std::size_t history_capacity) {
  const auto d = static_cast<std::size_t>(feature_dim);
  if (d_o == 0 || d_o >= d) {
    throw Error("object subspace size " + std::to_string(d_o) +
                " must lie in (0, " + std::to_string(d) + ")");
  }
  std::vector<std::size_t> all(d);
  std::iota(all.begin(), all.end(), 0);
  std::vector<bool> is_o(d, false);
  if (mode == SplitMode::middle) {
    for (std::size_t k = 0; k < d_o; ++k) is_o[k] = true;
  } else {
    Rng rng(seed);
    rng.shuffle(all);
    for (std::size_t k = 0; k < d_o; ++k) is_o[all[k]] = true;
  }
  FeatureSplit split;
  for (std::size_t k = 0; k < d; ++k) {
    (is_o[k] ? split.o_rows : split.s_rows).push_back(k);
  }
  split.history = XsHistory(static_cast<int>(d - d_o), history_capacity);
  return split;
}

SplitClassifierHead split_head(const ClassifierHead& head, SplitMode mode,
                               std::size_t d_o, std::uint64_t seed) {
  return {head, make_feature_split(head.feature_dim(), mode, d_o, seed)};
}

SplitScores feature_split_forward(const Eigen::MatrixXd& x,
                                  const ClassifierHead& head,
                                  const FeatureSplit& split) {
  SplitScores out;
  out.plain = forward_scores(x, head);
  Eigen::MatrixXd substituted_x = x;
  const Eigen::VectorXd& xs_bar = split.history.mean();
  for (std::size_t k = 0; k < split.s_rows.size(); ++k) {
    substituted_x.col(static_cast<Eigen::Index>(split.s_rows[k])).setConstant(
        xs_bar(static_cast<Eigen::Index>(k)));
  }
  out.substituted = forward_scores(substituted_x, head);
  return out;
}

NormalizedCam normalize_cam(const Eigen::MatrixXd& raw) {
  NormalizedCam out;
  out.raw = raw;
  // Row-major flat indices so ties resolve in scan order.
  double lo = raw(0, 0), hi = raw(0, 0);
  for (Eigen::Index y = 0; y < raw.rows(); ++y) {
    for (Eigen::Index x = 0; x < raw.cols(); ++x) {
      const double v = raw(y, x);
      const Eigen::Index flat = y * raw.cols() + x;
      if (v < lo) { lo = v; out.argmin = flat; }
      if (v > hi) { hi = v; out.argmax = flat; }
    }
  }
  out.range = hi - lo;
  if (out.range > 0.0) {
    out.normalized = (raw.array() - lo) / out.range;
  } else {
    out.range = 0.0;
    out.normalized = Eigen::MatrixXd::Zero(raw.rows(), raw.cols());
  }
  return out;
}

Eigen::MatrixXd compute_cam(const FeatureMapView& features,
                            const Eigen::MatrixXd& weight, std::size_t r,
                            bool normalize,
                            std::optional<std::span<const std::size_t>> rows) {
  if (r >= static_cast<std::size_t>(weight.cols())) {
    throw Error("CAM category index out of range");
  }
  if (features.depth != weight.rows()) {
    throw Error("feature depth does not match head input");
  }
  const int hw = features.height * features.width;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                 Eigen::RowMajor>>
      f(features.data, features.depth, hw);
  Eigen::RowVectorXd flat = Eigen::RowVectorXd::Zero(hw);
  const auto col = static_cast<Eigen::Index>(r);
  if (rows) {
    for (auto d : *rows) flat += weight(static_cast<Eigen::Index>(d), col) * f.row(d);
  } else {
    flat = weight.col(col).transpose() * f;
  }
  Eigen::MatrixXd cam(features.height, features.width);
  for (int y = 0; y < features.height; ++y) {
    for (int x = 0; x < features.width; ++x) cam(y, x) = flat(y * features.width + x);
  }
  return normalize ? normalize_cam(cam).normalized : cam;
}

}  // namespace ctxbias::model
