#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxbias/rng.hpp"
#include "ctxbias/tensor.hpp"

namespace ctxbias::model {

// Convolutional trunk producing the D-channel map the classifier head pools.
// forward() caches what backward() needs, so a backward call pairs with the
// most recent forward on the same object.
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual Tensor4 forward(const Tensor4& images) = 0;
  // Accumulates parameter gradients from dLoss/dFeatures.
  virtual void backward(const Tensor4& grad_features) = 0;
  virtual std::vector<ParamView> parameters() = 0;
  virtual int feature_dim() const = 0;
  virtual std::unique_ptr<Backbone> clone() const = 0;
  // Architecture description; make_backbone(describe()) rebuilds the shape.
  virtual nlohmann::json describe() const = 0;
};

using BackboneFactory =
    std::function<std::unique_ptr<Backbone>(const nlohmann::json&, Rng&)>;

// Registry keyed by describe()["kind"]. "small_cnn" is built in.
void register_backbone(const std::string& kind, BackboneFactory factory);
std::unique_ptr<Backbone> make_backbone(const nlohmann::json& description,
                                        Rng& rng);

class Conv2d {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, Rng& rng);

  Tensor4 forward(const Tensor4& input);
  Tensor4 backward(const Tensor4& grad_output);
  void append_parameters(std::vector<ParamView>& out, const std::string& prefix);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

 private:
  int in_;
  int out_;
  int kernel_;
  int pad_;
  RowMatrix weight_;  // out × in·k·k
  Eigen::VectorXd bias_;
  RowMatrix grad_weight_;
  Eigen::VectorXd grad_bias_;
  std::vector<RowMatrix> cols_;
  int in_h_ = 0;
  int in_w_ = 0;
};

// conv3x3 → ReLU → [maxpool 2×2] per block; no pooling after the last block.
struct SmallCnnConfig {
  int in_channels = 3;
  std::vector<int> channels = {8, 16, 64};
};

class SmallCnn final : public Backbone {
 public:
  SmallCnn(const SmallCnnConfig& cfg, Rng& rng);

  Tensor4 forward(const Tensor4& images) override;
  void backward(const Tensor4& grad_features) override;
  std::vector<ParamView> parameters() override;
  int feature_dim() const override { return cfg_.channels.back(); }
  std::unique_ptr<Backbone> clone() const override;
  nlohmann::json describe() const override;

 private:
  struct PoolCache {
    std::vector<int> argmax;
    int in_h = 0;
    int in_w = 0;
  };

  SmallCnnConfig cfg_;
  std::vector<Conv2d> convs_;
  std::vector<std::vector<unsigned char>> relu_masks_;
  std::vector<PoolCache> pools_;
};

}  // namespace ctxbias::model
