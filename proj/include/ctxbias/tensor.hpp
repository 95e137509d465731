#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ctxbias::model {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense N×C×H×W tensor, row-major.
struct Tensor4 {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> data;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_, double fill = 0.0)
      : n(n_), c(c_), h(h_), w(w_),
        data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t sample_size() const {
    return static_cast<std::size_t>(c) * h * w;
  }
  double* sample(int i) { return data.data() + i * sample_size(); }
  const double* sample(int i) const { return data.data() + i * sample_size(); }

  double& at(int i, int ch, int y, int x) {
    return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }
  double at(int i, int ch, int y, int x) const {
    return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }
};

// Read-only view of one sample's D×H'×W' feature map.
struct FeatureMapView {
  const double* data = nullptr;
  int depth = 0;
  int height = 0;
  int width = 0;

  double at(int y, int x, int d) const {
    return data[(static_cast<std::size_t>(d) * height + y) * width + x];
  }
  const double* channel(int d) const {
    return data + static_cast<std::size_t>(d) * height * width;
  }
};

inline FeatureMapView view_sample(const Tensor4& t, int i) {
  return {t.sample(i), t.c, t.h, t.w};
}

// A trainable parameter block and its gradient accumulator.
struct ParamView {
  std::string name;
  std::span<double> value;
  std::span<double> grad;
};

}  // namespace ctxbias::model
