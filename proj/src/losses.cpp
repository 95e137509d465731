#include "ctxbias/losses.hpp"

#include <algorithm>
#include <cmath>

#include "ctxbias/error.hpp"
#include "ctxbias/head.hpp"

namespace ctxbias::train {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

double stable_bce(double y, double t) {
  return std::max(y, 0.0) - y * t + std::log1p(std::exp(-std::abs(y)));
}

}  // namespace

Eigen::VectorXd bce_loss(const Eigen::VectorXd& logits,
                         const Eigen::VectorXd& targets) {
  if (logits.size() != targets.size()) throw Error("bce_loss size mismatch");
  Eigen::VectorXd out(logits.size());
  for (Eigen::Index j = 0; j < logits.size(); ++j) {
    out(j) = stable_bce(logits(j), targets(j));
  }
  return out;
}

LossGrad weighted_bce(const Eigen::MatrixXd& logits,
                      const Eigen::MatrixXd& targets,
                      const Eigen::MatrixXd& weights) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) {
    throw Error("weighted_bce target shape mismatch");
  }
  const bool weighted = weights.size() != 0;
  if (weighted &&
      (weights.rows() != logits.rows() || weights.cols() != logits.cols())) {
    throw Error("weighted_bce weight shape mismatch");
  }
  LossGrad out;
  out.grad.resize(logits.rows(), logits.cols());
  if (logits.rows() == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(logits.rows());
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      const double w = weighted ? weights(i, j) : 1.0;
      const double y = logits(i, j);
      const double t = targets(i, j);
      total += w * stable_bce(y, t);
      out.grad(i, j) = w * (sigmoid(y) - t) * inv_n;
    }
  }
  out.loss = total * inv_n;
  return out;
}

double compute_alpha(std::size_t cooccur_count, std::size_t exclusive_count,
                     double alpha_min) {
  if (exclusive_count == 0) {
    throw DataError("pair has no exclusive training images; alpha undefined");
  }
  return std::max(alpha_min, static_cast<double>(cooccur_count) /
                                 static_cast<double>(exclusive_count));
}

double compute_alpha(const data::LabeledDataset& train,
                     const bias::BiasedPair& pair, double alpha_min) {
  const auto sets = data::image_sets_for_pair(train, pair.b, pair.c);
  return compute_alpha(sets.cooccur.size(), sets.exclusive.size(), alpha_min);
}

double class_balance_weight(double beta, std::size_t n) {
  if (n == 0) throw DataError("class-balancing group is empty");
  if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("beta must lie in [0, 1)");
  return (1.0 - beta) / (1.0 - std::pow(beta, static_cast<double>(n)));
}

namespace {

double reduce(double total, std::size_t count, Reduction reduction) {
  if (count == 0) return 0.0;
  return reduction == Reduction::mean ? total / static_cast<double>(count) : total;
}

}  // namespace

double overlap_loss(std::span<const CamPair> cams, Reduction reduction) {
  double total = 0.0;
  for (const auto& p : cams) total += (p.cam_b.array() * p.cam_c.array()).sum();
  return reduce(total, cams.size(), reduction);
}

double regularization_loss(std::span<const CamPair> cams,
                           std::span<const CamPair> pre, Reduction reduction) {
  if (cams.size() != pre.size()) throw Error("CAM_pre count mismatch");
  double total = 0.0;
  for (std::size_t k = 0; k < cams.size(); ++k) {
    total += (pre[k].cam_b - cams[k].cam_b).cwiseAbs().sum() +
             (pre[k].cam_c - cams[k].cam_c).cwiseAbs().sum();
  }
  return reduce(total, cams.size(), reduction);
}

Eigen::MatrixXd normalize_backward(const Eigen::MatrixXd& raw,
                                   const Eigen::MatrixXd& grad_normalized) {
  const auto norm = model::normalize_cam(raw);
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(raw.rows(), raw.cols());
  if (norm.range <= 0.0) return grad;
  // n_k = (r_k − r_lo) / (r_hi − r_lo)
  const double inv = 1.0 / norm.range;
  const double s = grad_normalized.sum();
  const double t = (grad_normalized.array() * norm.normalized.array()).sum();
  grad = grad_normalized * inv;
  const auto cols = raw.cols();
  grad(norm.argmin / cols, norm.argmin % cols) += (t - s) * inv;
  grad(norm.argmax / cols, norm.argmax % cols) -= t * inv;
  return grad;
}

}  // namespace ctxbias::train
