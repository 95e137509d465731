#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ctxbias/bias.hpp"
#include "ctxbias/dataset.hpp"

namespace ctxbias::train {

double sigmoid(double x);

// Element-wise −[t·log σ(y) + (1−t)·log(1−σ(y))] in the overflow-free form
// max(y, 0) − y·t + log(1 + e^{−|y|}).
Eigen::VectorXd bce_loss(const Eigen::VectorXd& logits,
                         const Eigen::VectorXd& targets);

struct LossGrad {
  double loss = 0.0;
  Eigen::MatrixXd grad;  // dLoss/dlogits, same shape as logits
};

// Weights multiply the per-element BCE; reduction sums classes and averages
// over the batch rows. An empty weight matrix means all ones.
LossGrad weighted_bce(const Eigen::MatrixXd& logits,
                      const Eigen::MatrixXd& targets,
                      const Eigen::MatrixXd& weights = {});

// max(alpha_min, cooccur / exclusive). Throws DataError if exclusive == 0.
double compute_alpha(std::size_t cooccur_count, std::size_t exclusive_count,
                     double alpha_min);
double compute_alpha(const data::LabeledDataset& train,
                     const bias::BiasedPair& pair, double alpha_min);

// Effective-number weight (1 − β) / (1 − βⁿ); n must be ≥ 1.
double class_balance_weight(double beta, std::size_t n);

enum class Reduction { mean, sum };

// One co-occurring image's CAM pair (normalized or raw, per caller).
struct CamPair {
  Eigen::MatrixXd cam_b;
  Eigen::MatrixXd cam_c;
};

// L_O: Σ over images of Σ cam_b ⊙ cam_c, reduced over images.
double overlap_loss(std::span<const CamPair> cams, Reduction reduction = Reduction::mean);

// L_R: Σ over images of Σ |pre_b − cam_b| + |pre_c − cam_c|, reduced over
// images. `pre` holds the frozen stage-1 maps in the same order.
double regularization_loss(std::span<const CamPair> cams,
                           std::span<const CamPair> pre,
                           Reduction reduction = Reduction::mean);

// Backward through min-max normalization: given dL/dnormalized returns
// dL/draw. Constant maps pass no gradient.
Eigen::MatrixXd normalize_backward(const Eigen::MatrixXd& raw,
                                   const Eigen::MatrixXd& grad_normalized);

}  // namespace ctxbias::train
