#pragma once

// Brute-force reference implementations. Deliberately naive and independent
// of the library code they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/multiprecision/cpp_dec_float.hpp>

#include "ctxbias/dataset.hpp"
#include "ctxbias/rng.hpp"

namespace oracle {

// Rank of i when sorting by score descending, earlier rows first on ties.
inline std::size_t rank_of(const std::vector<double>& s, std::size_t i) {
  std::size_t r = 1;
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (j == i) continue;
    if (s[j] > s[i] || (s[j] == s[i] && j < i)) ++r;
  }
  return r;
}

inline std::optional<double> average_precision(const std::vector<double>& s,
                                               const std::vector<std::uint8_t>& y) {
  double total = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    ++pos;
    const std::size_t ri = rank_of(s, i);
    std::size_t hits = 0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] && rank_of(s, j) <= ri) ++hits;
    }
    total += static_cast<double>(hits) / static_cast<double>(ri);
  }
  if (pos == 0) return std::nullopt;
  return total / static_cast<double>(pos);
}

// Fraction of rows with label b whose b score sorts into the first k places
// (ties favour the lower category index).
inline std::optional<double> top_k_recall(const Eigen::MatrixXd& scores,
                                          const ctxbias::data::LabelMatrix& labels,
                                          const std::vector<std::size_t>& rows,
                                          std::size_t b, std::size_t k) {
  std::size_t pos = 0, hits = 0;
  for (auto r : rows) {
    if (!labels(r, b)) continue;
    ++pos;
    std::vector<std::pair<double, std::size_t>> order;
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      order.emplace_back(scores(static_cast<Eigen::Index>(r), j), static_cast<std::size_t>(j));
    }
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& c) {
      return a.first != c.first ? a.first > c.first : a.second < c.second;
    });
    for (std::size_t p = 0; p < std::min(k, order.size()); ++p) {
      if (order[p].second == b) ++hits;
    }
  }
  if (pos == 0) return std::nullopt;
  return static_cast<double>(hits) / static_cast<double>(pos);
}

inline double mean(const std::vector<double>& v) {
  long double s = 0.0L;
  for (double x : v) s += x;
  return static_cast<double>(s / static_cast<long double>(v.size()));
}

// Mean score of b over rows with b, split by presence of z.
inline std::optional<double> bias(const Eigen::MatrixXd& p,
                                  const ctxbias::data::LabelMatrix& y, std::size_t b,
                                  std::size_t z) {
  long double with = 0.0L, without = 0.0L;
  std::size_t nw = 0, nwo = 0;
  for (std::size_t i = 0; i < y.rows(); ++i) {
    if (!y(i, b)) continue;
    const double v = p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b));
    if (y(i, z)) {
      with += v;
      ++nw;
    } else {
      without += v;
      ++nwo;
    }
  }
  if (nw == 0 || nwo == 0 || without == 0.0L) return std::nullopt;
  return static_cast<double>((with / nw) / (without / nwo));
}

struct Pick {
  std::size_t b, c;
  double value;
};

inline std::vector<Pick> identify_pairs(const Eigen::MatrixXd& p,
                                        const ctxbias::data::LabelMatrix& y, std::size_t k,
                                        double threshold) {
  std::vector<Pick> all;
  for (std::size_t b = 0; b < y.cols(); ++b) {
    std::size_t nb = 0;
    for (std::size_t i = 0; i < y.rows(); ++i) nb += y(i, b);
    if (nb == 0) continue;
    std::optional<Pick> best;
    for (std::size_t z = 0; z < y.cols(); ++z) {
      if (z == b) continue;
      std::size_t both = 0;
      for (std::size_t i = 0; i < y.rows(); ++i) both += y(i, b) && y(i, z);
      if (static_cast<double>(both) / static_cast<double>(nb) < threshold) continue;
      const auto v = bias(p, y, b, z);
      if (!v || !(*v > 0.0)) continue;
      if (!best || *v > best->value) best = Pick{b, z, *v};
    }
    if (best) all.push_back(*best);
  }
  // Selection sort: highest bias first, lower b on ties.
  std::vector<Pick> out;
  while (!all.empty() && out.size() < k) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < all.size(); ++j) {
      if (all[j].value > all[arg].value ||
          (all[j].value == all[arg].value && all[j].b < all[arg].b)) {
        arg = j;
      }
    }
    out.push_back(all[arg]);
    all.erase(all.begin() + static_cast<std::ptrdiff_t>(arg));
  }
  return out;
}

// BCE in 50-digit decimal arithmetic.
inline double bce(double logit, double target) {
  using big = boost::multiprecision::cpp_dec_float_50;
  const big x(logit);
  const big sig = big(1) / (big(1) + exp(-x));
  const big loss = -(big(target) * log(sig) + (big(1) - big(target)) * log(big(1) - sig));
  return loss.convert_to<double>();
}

inline ctxbias::data::LabelMatrix random_labels(ctxbias::Rng& rng, std::size_t n,
                                                std::size_t m, double p) {
  ctxbias::data::LabelMatrix y(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) y(i, j) = rng.bernoulli(p) ? 1 : 0;
  }
  return y;
}

inline Eigen::MatrixXd random_matrix(ctxbias::Rng& rng, Eigen::Index r, Eigen::Index c,
                                     double lo = 0.0, double hi = 1.0) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(lo, hi);
  }
  return m;
}

}  // namespace oracle
