#include "ctxbias/bias.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ctxbias/error.hpp"

namespace ctxbias::bias {

void PredictionMatrix::validate_against(
    const data::LabeledDataset& dataset) const {
  if (rows() != dataset.size() || cols() != dataset.num_categories()) {
    throw DataError("prediction matrix is " + std::to_string(rows()) + "x" +
                    std::to_string(cols()) + " but dataset is " +
                    std::to_string(dataset.size()) + "x" +
                    std::to_string(dataset.num_categories()));
  }
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    const double v = scores.data()[i];
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw DataError("prediction scores must be finite and in [0, 1]");
    }
  }
}

double mean_prediction(const PredictionMatrix& preds,
                       std::span<const std::size_t> rows, std::size_t b) {
  if (rows.empty()) throw DataError("mean_prediction over an empty id set");
  double sum = 0.0;
  for (auto r : rows) sum += preds.scores(static_cast<Eigen::Index>(r),
                                          static_cast<Eigen::Index>(b));
  return sum / static_cast<double>(rows.size());
}

std::optional<double> bias(const PredictionMatrix& preds,
                           const data::LabeledDataset& dataset, std::size_t b,
                           std::size_t z) {
  const auto sets = data::image_sets_for_pair(dataset, b, z);
  if (sets.cooccur.empty() || sets.exclusive.empty()) return std::nullopt;
  const double without = mean_prediction(preds, sets.exclusive, b);
  if (without == 0.0) return std::nullopt;
  return mean_prediction(preds, sets.cooccur, b) / without;
}

PairSelection identify_pairs(
    const PredictionMatrix& preds, const data::LabeledDataset& dataset,
    std::size_t k, double cooccur_threshold,
    const std::optional<std::vector<std::size_t>>& candidates) {
  if (k == 0) throw DataError("K must be at least 1");
  if (!(cooccur_threshold > 0.0 && cooccur_threshold <= 1.0)) {
    throw DataError("co-occurrence threshold must lie in (0, 1]");
  }
  const std::size_t m = dataset.num_categories();
  std::vector<std::size_t> bs;
  if (candidates) {
    bs = *candidates;
    std::sort(bs.begin(), bs.end());
    bs.erase(std::unique(bs.begin(), bs.end()), bs.end());
    for (auto b : bs) {
      if (b >= m) throw DataError("candidate category index out of range");
    }
  } else {
    for (std::size_t b = 0; b < m; ++b) bs.push_back(b);
  }

  std::vector<BiasedPair> best_per_b;
  for (auto b : bs) {
    const std::size_t occur = dataset.labels.count(b);
    if (occur == 0) continue;
    std::optional<BiasedPair> best;
    for (std::size_t z = 0; z < m; ++z) {
      if (z == b) continue;
      auto sets = data::image_sets_for_pair(dataset, b, z);
      const double freq = static_cast<double>(sets.cooccur.size()) /
                          static_cast<double>(occur);
      if (freq < cooccur_threshold) continue;
      if (sets.exclusive.empty()) continue;
      const double without = mean_prediction(preds, sets.exclusive, b);
      if (without == 0.0) continue;
      const double value = mean_prediction(preds, sets.cooccur, b) / without;
      if (!(value > 0.0)) continue;
      // Strict comparison keeps the lower z on ties.
      if (!best || value > best->bias_value) {
        best = BiasedPair{b, z, value, std::move(sets)};
      }
    }
    if (best) best_per_b.push_back(std::move(*best));
  }

  std::stable_sort(best_per_b.begin(), best_per_b.end(),
                   [](const BiasedPair& x, const BiasedPair& y) {
                     if (x.bias_value != y.bias_value) {
                       return x.bias_value > y.bias_value;
                     }
                     return x.b < y.b;
                   });
  PairSelection out;
  out.fewer_than_requested = best_per_b.size() < k;
  if (best_per_b.size() > k) best_per_b.resize(k);
  out.pairs = std::move(best_per_b);
  return out;
}

void write_pairs_json(std::span<const BiasedPair> pairs,
                      const data::LabeledDataset& dataset,
                      const std::filesystem::path& path) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& p : pairs) {
    const auto sets = data::image_sets_for_pair(dataset, p.b, p.c);
    doc.push_back({{"b", p.b},
                   {"c", p.c},
                   {"b_name", dataset.category_names.at(p.b)},
                   {"c_name", dataset.category_names.at(p.c)},
                   {"bias", p.bias_value},
                   {"counts",
                    {{"cooccur", sets.cooccur.size()},
                     {"exclusive", sets.exclusive.size()},
                     {"other", sets.other.size()}}}});
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write pair list " + path.string());
  out << doc.dump(2) << '\n';
}

namespace {

std::size_t resolve_category(const nlohmann::json& v,
                             const data::LabeledDataset& dataset,
                             const std::string& where) {
  if (v.is_number_integer()) {
    const auto idx = v.get<std::int64_t>();
    if (idx < 0 || static_cast<std::size_t>(idx) >= dataset.num_categories()) {
      throw DataError(where + ": category index " + std::to_string(idx) +
                      " out of range");
    }
    return static_cast<std::size_t>(idx);
  }
  if (v.is_string()) {
    if (auto idx = dataset.category_index(v.get<std::string>())) return *idx;
    throw DataError(where + ": unknown category '" + v.get<std::string>() + "'");
  }
  throw ParseError(where + ": category must be an index or a name");
}

}  // namespace

std::vector<BiasedPair> read_pairs_json(const std::filesystem::path& path,
                                        const data::LabeledDataset& dataset) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open pair list " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw ParseError(path.string() + ": expected an array");
  std::vector<BiasedPair> pairs;
  for (std::size_t k = 0; k < doc.size(); ++k) {
    const auto& rec = doc[k];
    const std::string where = path.string() + " record " + std::to_string(k);
    // Names take precedence so lists stay valid across vocabularies.
    const auto& bv = rec.contains("b_name") ? rec["b_name"] : rec.at("b");
    const auto& cv = rec.contains("c_name") ? rec["c_name"] : rec.at("c");
    BiasedPair p;
    p.b = resolve_category(bv, dataset, where);
    p.c = resolve_category(cv, dataset, where);
    if (p.b == p.c) throw DataError(where + ": b and c must differ");
    p.bias_value = rec.value("bias", 0.0);
    p.sets = data::image_sets_for_pair(dataset, p.b, p.c);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

std::vector<BiasedPair> rebind_pairs(std::span<const BiasedPair> pairs,
                                     const data::LabeledDataset& dataset) {
  std::vector<BiasedPair> out(pairs.begin(), pairs.end());
  for (auto& p : out) p.sets = data::image_sets_for_pair(dataset, p.b, p.c);
  return out;
}

}  // namespace ctxbias::bias
