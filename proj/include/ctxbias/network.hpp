#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxbias/backbone.hpp"
#include "ctxbias/head.hpp"

namespace ctxbias::model {

struct ForwardPass {
  Tensor4 features;        // N×D×H'×W'
  Eigen::MatrixXd pooled;  // N×D
  Eigen::MatrixXd logits;  // N×M
};

// Backbone + global average pool + linear head, with an optional feature
// split of the head rows.
class Network {
 public:
  Network(std::unique_ptr<Backbone> backbone, int num_classes, Rng& rng);
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  ForwardPass forward(const Tensor4& images);

  // Backprop from dL/dpooled (N×D) plus an optional direct dL/dfeatures term
  // into the backbone. Head gradients are accumulated by the caller.
  void backward_features(const ForwardPass& pass,
                         const Eigen::MatrixXd& grad_pooled,
                         const Tensor4* grad_features = nullptr);

  void zero_grad();
  std::vector<ParamView> parameters();

  // Replaces the head with a freshly initialized one of num_classes outputs.
  void reset_head(int num_classes, Rng& rng);

  Backbone& backbone() { return *backbone_; }
  const Backbone& backbone() const { return *backbone_; }
  int feature_dim() const { return backbone_->feature_dim(); }
  int num_classes() const { return head.num_classes(); }

  ClassifierHead head;
  Eigen::MatrixXd grad_weight;
  Eigen::VectorXd grad_bias;
  std::optional<FeatureSplit> split;

 private:
  std::unique_ptr<Backbone> backbone_;
};

// SGD with momentum and L2 weight decay (v = μv + g + λw; w -= lr·v).
class SgdMomentum {
 public:
  SgdMomentum() = default;
  SgdMomentum(double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(std::vector<ParamView>& params, double lr);

  std::vector<std::vector<double>>& state() { return velocity_; }
  const std::vector<std::vector<double>>& state() const { return velocity_; }

 private:
  double momentum_ = 0.9;
  double weight_decay_ = 0.0;
  std::vector<std::vector<double>> velocity_;
};

// Everything needed to resume or evaluate a run.
struct ModelState {
  Network network;
  std::vector<std::vector<double>> optimizer_state;
  int epoch = 0;
  std::uint64_t seed = 0;
  nlohmann::json meta = nlohmann::json::object();
};

// Single binary archive: magic, json header (architecture, split metadata,
// epoch, seed, meta), then little-endian float64 blocks for parameters,
// optimizer state and the context-feature history.
void save_checkpoint(const ModelState& state, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

// Copies weights (and split) from `source` into `target`; throws on any
// shape mismatch.
void restore_weights(Network& target, const Network& source);

}  // namespace ctxbias::model
