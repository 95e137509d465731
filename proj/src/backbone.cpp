#include "ctxbias/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>

#include "ctxbias/error.hpp"

namespace ctxbias::model {

namespace {

std::mutex& registry_mutex() {
  static std::mutex m;
  return m;
}

std::map<std::string, BackboneFactory>& registry() {
  static std::map<std::string, BackboneFactory> r = {
      {"small_cnn", [](const nlohmann::json& d, Rng& rng) {
         SmallCnnConfig cfg;
         cfg.in_channels = d.value("in_channels", 3);
         cfg.channels = d.value("channels", cfg.channels);
         return std::unique_ptr<Backbone>(new SmallCnn(cfg, rng));
       }}};
  return r;
}

}  // namespace

void register_backbone(const std::string& kind, BackboneFactory factory) {
  std::lock_guard lock(registry_mutex());
  registry()[kind] = std::move(factory);
}

std::unique_ptr<Backbone> make_backbone(const nlohmann::json& description,
                                        Rng& rng) {
  const std::string kind = description.value("kind", std::string("small_cnn"));
  BackboneFactory factory;
  {
    std::lock_guard lock(registry_mutex());
    auto it = registry().find(kind);
    if (it == registry().end()) {
      throw ConfigError("backbone kind '" + kind + "' is not registered");
    }
    factory = it->second;
  }
  return factory(description, rng);
}

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, Rng& rng)
    : in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      pad_(kernel / 2),
      weight_(out_channels, in_channels * kernel * kernel),
      bias_(Eigen::VectorXd::Zero(out_channels)),
      grad_weight_(RowMatrix::Zero(out_channels, in_channels * kernel * kernel)),
      grad_bias_(Eigen::VectorXd::Zero(out_channels)) {
  const double stddev = std::sqrt(2.0 / (in_channels * kernel * kernel));
  for (Eigen::Index i = 0; i < weight_.size(); ++i) {
    weight_.data()[i] = stddev * rng.normal();
  }
}

Tensor4 Conv2d::forward(const Tensor4& input) {
  if (input.c != in_) throw Error("conv input channel mismatch");
  in_h_ = input.h;
  in_w_ = input.w;
  const int hw = input.h * input.w;
  const int rows = in_ * kernel_ * kernel_;
  Tensor4 output(input.n, out_, input.h, input.w);
  cols_.assign(input.n, RowMatrix());
  for (int i = 0; i < input.n; ++i) {
    RowMatrix& cols = cols_[i];
    cols.setZero(rows, hw);
    const double* src = input.sample(i);
    for (int ch = 0; ch < in_; ++ch) {
      for (int ky = 0; ky < kernel_; ++ky) {
        for (int kx = 0; kx < kernel_; ++kx) {
          double* dst = cols.row((ch * kernel_ + ky) * kernel_ + kx).data();
          for (int y = 0; y < input.h; ++y) {
            const int sy = y + ky - pad_;
            if (sy < 0 || sy >= input.h) continue;
            const double* src_row = src + (ch * input.h + sy) * input.w;
            const int x_lo = std::max(0, pad_ - kx);
            const int x_hi = std::min(input.w, input.w + pad_ - kx);
            for (int x = x_lo; x < x_hi; ++x) {
              dst[y * input.w + x] = src_row[x + kx - pad_];
            }
          }
        }
      }
    }
    Eigen::Map<RowMatrix> out(output.sample(i), out_, hw);
    out.noalias() = weight_ * cols;
    out.colwise() += bias_;
  }
  return output;
}

Tensor4 Conv2d::backward(const Tensor4& grad_output) {
  const int hw = in_h_ * in_w_;
  Tensor4 grad_input(grad_output.n, in_, in_h_, in_w_);
  RowMatrix grad_cols;
  for (int i = 0; i < grad_output.n; ++i) {
    Eigen::Map<const RowMatrix> g(grad_output.sample(i), out_, hw);
    grad_weight_.noalias() += g * cols_[i].transpose();
    grad_bias_ += g.rowwise().sum();
    grad_cols.noalias() = weight_.transpose() * g;
    double* dst = grad_input.sample(i);
    for (int ch = 0; ch < in_; ++ch) {
      for (int ky = 0; ky < kernel_; ++ky) {
        for (int kx = 0; kx < kernel_; ++kx) {
          const double* src = grad_cols.row((ch * kernel_ + ky) * kernel_ + kx).data();
          for (int y = 0; y < in_h_; ++y) {
            const int sy = y + ky - pad_;
            if (sy < 0 || sy >= in_h_) continue;
            double* dst_row = dst + (ch * in_h_ + sy) * in_w_;
            const int x_lo = std::max(0, pad_ - kx);
            const int x_hi = std::min(in_w_, in_w_ + pad_ - kx);
            for (int x = x_lo; x < x_hi; ++x) {
              dst_row[x + kx - pad_] += src[y * in_w_ + x];
            }
          }
        }
      }
    }
  }
  return grad_input;
}

void Conv2d::append_parameters(std::vector<ParamView>& out,
                               const std::string& prefix) {
  out.push_back({prefix + ".weight",
                 {weight_.data(), static_cast<std::size_t>(weight_.size())},
                 {grad_weight_.data(), static_cast<std::size_t>(grad_weight_.size())}});
  out.push_back({prefix + ".bias",
                 {bias_.data(), static_cast<std::size_t>(bias_.size())},
                 {grad_bias_.data(), static_cast<std::size_t>(grad_bias_.size())}});
}

SmallCnn::SmallCnn(const SmallCnnConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.channels.empty()) throw ConfigError("small_cnn needs at least one block");
  int in = cfg.in_channels;
  for (int out : cfg.channels) {
    if (out <= 0) throw ConfigError("small_cnn channel counts must be positive");
    convs_.emplace_back(in, out, 3, rng);
    in = out;
  }
  relu_masks_.resize(convs_.size());
  pools_.resize(convs_.size());
}

Tensor4 SmallCnn::forward(const Tensor4& images) {
  Tensor4 x = images;
  for (std::size_t l = 0; l < convs_.size(); ++l) {
    x = convs_[l].forward(x);
    auto& mask = relu_masks_[l];
    mask.resize(x.data.size());
    for (std::size_t k = 0; k < x.data.size(); ++k) {
      mask[k] = x.data[k] > 0.0;
      if (!mask[k]) x.data[k] = 0.0;
    }
    if (l + 1 == convs_.size()) break;
    auto& pool = pools_[l];
    pool.in_h = x.h;
    pool.in_w = x.w;
    Tensor4 pooled(x.n, x.c, x.h / 2, x.w / 2);
    pool.argmax.assign(pooled.data.size(), 0);
    std::size_t k = 0;
    for (int i = 0; i < x.n; ++i) {
      for (int ch = 0; ch < x.c; ++ch) {
        for (int y = 0; y < pooled.h; ++y) {
          for (int xx = 0; xx < pooled.w; ++xx, ++k) {
            double best = -std::numeric_limits<double>::infinity();
            int best_idx = 0;
            for (int dy = 0; dy < 2; ++dy) {
              for (int dx = 0; dx < 2; ++dx) {
                const int idx = ((i * x.c + ch) * x.h + 2 * y + dy) * x.w + 2 * xx + dx;
                if (x.data[idx] > best) {
                  best = x.data[idx];
                  best_idx = idx;
                }
              }
            }
            pooled.data[k] = best;
            pool.argmax[k] = best_idx;
          }
        }
      }
    }
    x = std::move(pooled);
  }
  return x;
}

void SmallCnn::backward(const Tensor4& grad_features) {
  Tensor4 g = grad_features;
  for (std::size_t l = convs_.size(); l-- > 0;) {
    if (l + 1 < convs_.size()) {
      const auto& pool = pools_[l];
      Tensor4 up(g.n, g.c, pool.in_h, pool.in_w);
      for (std::size_t k = 0; k < g.data.size(); ++k) {
        up.data[pool.argmax[k]] += g.data[k];
      }
      g = std::move(up);
    }
    const auto& mask = relu_masks_[l];
    for (std::size_t k = 0; k < g.data.size(); ++k) {
      if (!mask[k]) g.data[k] = 0.0;
    }
    g = convs_[l].backward(g);
  }
}

std::vector<ParamView> SmallCnn::parameters() {
  std::vector<ParamView> out;
  for (std::size_t l = 0; l < convs_.size(); ++l) {
    convs_[l].append_parameters(out, "conv" + std::to_string(l));
  }
  return out;
}

std::unique_ptr<Backbone> SmallCnn::clone() const {
  return std::make_unique<SmallCnn>(*this);
}

nlohmann::json SmallCnn::describe() const {
  return {{"kind", "small_cnn"},
          {"in_channels", cfg_.in_channels},
          {"channels", cfg_.channels}};
}

}  // namespace ctxbias::model
