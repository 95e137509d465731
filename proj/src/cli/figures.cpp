#include "ctxbias/cli/figures.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace ctxbias::cli {

namespace {

constexpr std::array<const char*, 10> kPalette = {
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
    "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"};

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

}  // namespace

std::string bar_chart_svg(const std::string& title,
                          const std::vector<std::string>& groups,
                          const std::vector<BarSeries>& series) {
  const double left = 50, top = 40, plot_h = 240, bar_w = 14, gap = 20;
  const double group_w = std::max<double>(1, series.size()) * bar_w + gap;
  const double plot_w = std::max(200.0, group_w * static_cast<double>(groups.size()));
  const double legend_h = 18.0 * static_cast<double>(series.size());
  const double width = left + plot_w + 20;
  const double height = top + plot_h + 90 + legend_h;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width)
      << "\" height=\"" << fmt(height) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << fmt(width / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
      << escape(title) << "</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double y = top + plot_h * (1.0 - t / 4.0);
    svg << "<line x1=\"" << fmt(left) << "\" x2=\"" << fmt(left + plot_w) << "\" y1=\""
        << fmt(y) << "\" y2=\"" << fmt(y) << "\" stroke=\"#ddd\"/>\n";
    svg << "<text x=\"" << fmt(left - 6) << "\" y=\"" << fmt(y + 4)
        << "\" text-anchor=\"end\">" << fmt(t * 25.0) << "</text>\n";
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double x0 = left + gap / 2 + group_w * static_cast<double>(g);
    for (std::size_t s = 0; s < series.size(); ++s) {
      if (g >= series[s].values.size() || !series[s].values[g]) continue;
      const double v = std::clamp(*series[s].values[g], 0.0, 1.0);
      const double h = plot_h * v;
      svg << "<rect x=\"" << fmt(x0 + bar_w * static_cast<double>(s)) << "\" y=\""
          << fmt(top + plot_h - h) << "\" width=\"" << fmt(bar_w - 2) << "\" height=\""
          << fmt(h) << "\" fill=\"" << kPalette[s % kPalette.size()] << "\"><title>"
          << escape(series[s].name) << ": " << fmt(100.0 * v) << "</title></rect>\n";
    }
    const double cx = x0 + (group_w - gap) / 2;
    svg << "<text transform=\"translate(" << fmt(cx) << "," << fmt(top + plot_h + 12)
        << ") rotate(40)\">" << escape(groups[g]) << "</text>\n";
  }
  svg << "<line x1=\"" << fmt(left) << "\" x2=\"" << fmt(left) << "\" y1=\"" << fmt(top)
      << "\" y2=\"" << fmt(top + plot_h) << "\" stroke=\"black\"/>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const double y = top + plot_h + 80 + 18.0 * static_cast<double>(s);
    svg << "<rect x=\"" << fmt(left) << "\" y=\"" << fmt(y - 10)
        << "\" width=\"12\" height=\"12\" fill=\"" << kPalette[s % kPalette.size()] << "\"/>\n";
    svg << "<text x=\"" << fmt(left + 18) << "\" y=\"" << fmt(y) << "\">"
        << escape(series[s].name) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::array<float, 3> jet_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  auto ramp = [](double x) { return static_cast<float>(std::clamp(1.5 - std::abs(x), 0.0, 1.0)); };
  return {ramp(4.0 * v - 3.0), ramp(4.0 * v - 2.0), ramp(4.0 * v - 1.0)};
}

data::Image cam_overlay(const data::Image& image, const Eigen::MatrixXd& cam, double alpha) {
  data::Image map(static_cast<int>(cam.rows()), static_cast<int>(cam.cols()), 1);
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) map.at(y, x, 0) = static_cast<float>(cam(y, x));
  }
  const auto up = data::resize_bilinear(map, image.height, image.width);
  data::Image out(image.height, image.width, 3);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const auto color = jet_color(up.at(y, x, 0));
      for (int c = 0; c < 3; ++c) {
        const float base = image.at(y, x, std::min(c, image.channels - 1));
        out.at(y, x, c) = static_cast<float>((1.0 - alpha) * base + alpha * color[c]);
      }
    }
  }
  return out;
}

}  // namespace ctxbias::cli
