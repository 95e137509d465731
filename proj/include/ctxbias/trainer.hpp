#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxbias/baselines.hpp"
#include "ctxbias/batching.hpp"
#include "ctxbias/evaluation.hpp"
#include "ctxbias/losses.hpp"
#include "ctxbias/network.hpp"

namespace ctxbias::train {

enum class Method {
  standard,
  remove_labels,
  remove_images,
  split_biased,
  weighted,
  negative_penalty,
  class_balancing,
  cam_based,
  feature_split,
};

std::string to_string(Method method);
Method method_from_string(const std::string& name);
std::span<const Method> all_methods();

enum class EpochSelection {
  last,
  lowest_val_loss,
  best_exclusive,
  best_exclusive_plus_cooccur,
};

std::string to_string(EpochSelection selection);
EpochSelection selection_from_string(const std::string& name);

struct Hyperparams {
  double lambda1 = 0.1;
  double lambda2 = 0.1;
  double alpha_min = 3.0;
  double beta = 0.99;
  double weight_factor = 10.0;
  std::size_t d_o = 0;  // 0 → D/2
  model::SplitMode split_mode = model::SplitMode::middle;
  std::size_t history_length = 10;
  bool weighted_loss = true;  // feature-split α weighting
  bool cam_normalize = true;
  Reduction cam_reduction = Reduction::mean;
  Recombination recombination = Recombination::max;

  int epochs = 20;
  double lr = 0.01;
  int lr_drop_epoch = 0;  // lr is multiplied by lr_drop_factor after this epoch; 0 = never
  double lr_drop_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t batch_size = 200;
  std::uint64_t seed = 0;

  double lr_at(int epoch) const {
    return lr_drop_epoch > 0 && epoch > lr_drop_epoch ? lr * lr_drop_factor : lr;
  }
};

struct MethodSpec {
  Method method = Method::standard;
  Hyperparams hp;

  // Stage-1 recipe for standard (100 epochs, lr 0.1 → 0.01 after 60); stage-2
  // recipe (20 epochs at 0.01) otherwise. split_biased retrains from scratch
  // for the stage-1 length plus 20 epochs; cam_based uses batch size 100.
  static MethodSpec defaults(Method method);
};

nlohmann::json to_json(const Hyperparams& hp);
// Missing keys keep the values already in `hp`.
void update_from_json(Hyperparams& hp, const nlohmann::json& j);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double l_bce = 0.0;
  double l_o = 0.0;
  double l_r = 0.0;
  std::optional<double> val_loss;
  std::optional<double> val_exclusive;
  std::optional<double> val_cooccur;
};

nlohmann::json to_json(const EpochRecord& r);

struct TrainOptions {
  data::PreprocessOptions preprocess;
  bool augment = true;
  nlohmann::json backbone = {{"kind", "small_cnn"}};
  // Validation data enables val metrics and non-last epoch selection.
  const data::LabeledDataset* val = nullptr;
  std::vector<bias::BiasedPair> val_pairs;
  eval::MetricKind metric = eval::MetricKind::map;
  EpochSelection selection = EpochSelection::last;
  // Stops after this epoch (0 = run to hp.epochs); for checkpoint/resume.
  int stop_after_epoch = 0;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  model::ModelState state;   // selected model
  model::ModelState last;    // state after the final epoch run
  std::vector<EpochRecord> history;
  std::vector<double> epoch_seconds;
  int selected_epoch = 0;
};

TrainResult train_standard(const data::LabeledDataset& train,
                           const MethodSpec& spec, const TrainOptions& opts);

// Fine-tunes `standard` with a mitigation method (split_biased starts over).
TrainResult train_stage2(const MethodSpec& spec, const model::ModelState& standard,
                         const data::LabeledDataset& train,
                         std::span<const bias::BiasedPair> pairs,
                         const TrainOptions& opts);

// Continues a run saved mid-way. cam_based needs the stage-1 model as anchor.
TrainResult resume_training(const MethodSpec& spec, const model::ModelState& checkpoint,
                            const data::LabeledDataset& train,
                            std::span<const bias::BiasedPair> pairs,
                            const TrainOptions& opts,
                            const model::ModelState* standard = nullptr);

// Scores in the original M-category space (split_biased heads recombined).
bias::PredictionMatrix predict_categories(const model::ModelState& state,
                                          const data::LabeledDataset& dataset,
                                          const data::PreprocessOptions& preprocess);

// ---- objectives (exposed for gradient checks) ----

struct StepTerms {
  double total = 0.0;
  double l_bce = 0.0;
  double l_o = 0.0;
  double l_r = 0.0;
};

// Weighted BCE (batch.weights) through the full network.
StepTerms bce_objective(model::Network& net, const Batch& batch, bool backprop);

// Sample → co-occur if any pair has both b and c, else other.
struct BatchPartition {
  std::vector<std::size_t> cooccur;
  std::vector<std::size_t> other;
};
BatchPartition partition_batch_cooccur(const Eigen::MatrixXd& targets,
                                       std::span<const bias::BiasedPair> pairs);

// Sample → exclusive if any pair has b without c.
std::vector<std::uint8_t> exclusive_mask(const Eigen::MatrixXd& targets,
                                         std::span<const bias::BiasedPair> pairs);

struct CamSettings {
  double lambda1 = 0.1;
  double lambda2 = 0.1;
  bool normalize = true;
  Reduction reduction = Reduction::mean;
};

// Frozen-model CAMs for every (sample, active pair), in the iteration order
// cam_objective uses.
std::vector<CamPair> cam_anchor(model::Network& frozen, const Batch& batch,
                                std::span<const bias::BiasedPair> pairs,
                                bool normalize);

// λ1·L_O + λ2·L_R + L_BCE on a co-occurrence batch.
StepTerms cam_objective(model::Network& net, const Batch& batch,
                        std::span<const bias::BiasedPair> pairs,
                        std::span<const CamPair> anchor, const CamSettings& settings,
                        bool backprop);

// Feature-split weighted BCE. Exclusive samples use W_oᵀx_o + W_sᵀx̄_s with
// no gradient into W_s or x_s; others use the plain forward. The W_s rows
// used on the substituted path are read from `detached_weight` when given
// (a constant copy), else from the live head. batch_xs_mean receives the
// batch mean of the non-substituted x_s.
StepTerms feature_split_objective(model::Network& net, const Batch& batch,
                                  const std::vector<std::uint8_t>& exclusive,
                                  const Eigen::VectorXd& xs_bar, bool backprop,
                                  const Eigen::MatrixXd* detached_weight = nullptr,
                                  Eigen::VectorXd* batch_xs_mean = nullptr);

// N×M α weights: column b of each pair carries max(α_min, co/excl).
Eigen::MatrixXd alpha_weights(const data::LabeledDataset& train,
                              std::span<const bias::BiasedPair> pairs,
                              double alpha_min);

}  // namespace ctxbias::train
