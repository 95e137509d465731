#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ctxbias/image.hpp"

namespace ctxbias::cli {

struct BarSeries {
  std::string name;
  std::vector<std::optional<double>> values;  // one per group; missing bars are skipped
};

// Grouped vertical bars, one group per label. Values are expected in [0, 1].
std::string bar_chart_svg(const std::string& title,
                          const std::vector<std::string>& groups,
                          const std::vector<BarSeries>& series);

std::array<float, 3> jet_color(double v);

// Upsamples `cam` (values in [0, 1]) to the image size and alpha-blends its
// jet colouring over the image.
data::Image cam_overlay(const data::Image& image, const Eigen::MatrixXd& cam,
                        double alpha = 0.5);

}  // namespace ctxbias::cli
