#include "ctxbias/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ctxbias/batching.hpp"
#include "ctxbias/error.hpp"
#include "ctxbias/losses.hpp"
#include "ctxbias/rng.hpp"

namespace ctxbias::eval {

std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw Error("AP input size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return scores[a] > scores[b]; });
  double precision_sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[order[rank]]) {
      ++hits;
      precision_sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  if (hits == 0) return std::nullopt;
  return precision_sum / static_cast<double>(hits);
}

std::optional<double> top_k_recall(const Eigen::MatrixXd& scores,
                                   const data::LabelMatrix& labels,
                                   std::span<const std::size_t> rows,
                                   std::size_t b, std::size_t k) {
  std::size_t positives = 0;
  std::size_t hits = 0;
  const auto col = static_cast<Eigen::Index>(b);
  for (auto r : rows) {
    if (!labels(r, b)) continue;
    ++positives;
    const auto row = static_cast<Eigen::Index>(r);
    const double s = scores(row, col);
    std::size_t ahead = 0;
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      if (j == col) continue;
      const double v = scores(row, j);
      if (v > s || (v == s && j < col)) ++ahead;
    }
    if (ahead < k) ++hits;
  }
  if (positives == 0) return std::nullopt;
  return static_cast<double>(hits) / static_cast<double>(positives);
}

std::vector<std::size_t> build_distribution(const data::PairImageSets& sets,
                                            DistributionKind kind) {
  const auto& with_b =
      kind == DistributionKind::exclusive ? sets.exclusive : sets.cooccur;
  std::vector<std::size_t> out;
  out.reserve(with_b.size() + sets.other.size());
  std::merge(with_b.begin(), with_b.end(), sets.other.begin(), sets.other.end(),
             std::back_inserter(out));
  return out;
}

std::string to_string(MetricKind kind) {
  return kind == MetricKind::map ? "mAP" : "top3_recall";
}

MetricKind metric_from_string(const std::string& name) {
  if (name == "mAP" || name == "map") return MetricKind::map;
  if (name == "top3_recall" || name == "top3") return MetricKind::top3_recall;
  throw ConfigError("unknown metric '" + name + "'");
}

namespace {

std::optional<double> metric_on_rows(const PredictionMatrix& preds,
                                     const data::LabelMatrix& labels,
                                     std::span<const std::size_t> rows,
                                     std::size_t b, MetricKind metric) {
  if (metric == MetricKind::top3_recall) {
    return top_k_recall(preds.scores, labels, rows, b, 3);
  }
  std::vector<double> s(rows.size());
  std::vector<std::uint8_t> l(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    s[k] = preds.scores(static_cast<Eigen::Index>(rows[k]), static_cast<Eigen::Index>(b));
    l[k] = labels(rows[k], b);
  }
  return average_precision(s, l);
}

std::optional<double> mean_of(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

}  // namespace

EvalReport evaluate(const PredictionMatrix& preds,
                    const data::LabeledDataset& dataset,
                    std::span<const BiasedPair> pairs, MetricKind metric,
                    const std::optional<std::vector<std::size_t>>& non_biased) {
  preds.validate_against(dataset);
  EvalReport report;
  report.metric = metric;
  const auto& names = dataset.category_names;

  std::vector<double> excl, cooc;
  for (const auto& p : pairs) {
    const auto sets = data::image_sets_for_pair(dataset, p.b, p.c);
    PairResult r{p.b, p.c, names.at(p.b), names.at(p.c), std::nullopt, std::nullopt};
    r.exclusive = metric_on_rows(preds, dataset.labels,
                                 build_distribution(sets, DistributionKind::exclusive),
                                 p.b, metric);
    r.cooccur = metric_on_rows(preds, dataset.labels,
                               build_distribution(sets, DistributionKind::cooccur),
                               p.b, metric);
    if (r.exclusive) {
      excl.push_back(*r.exclusive);
    } else {
      report.warnings.push_back("no exclusive positives for " + r.b_name +
                                "; excluded from the exclusive mean");
    }
    if (r.cooccur) {
      cooc.push_back(*r.cooccur);
    } else {
      report.warnings.push_back("no co-occurring positives for " + r.b_name +
                                "; excluded from the co-occur mean");
    }
    report.per_pair.push_back(std::move(r));
  }
  report.exclusive_mean = mean_of(excl);
  report.cooccur_mean = mean_of(cooc);

  std::vector<std::size_t> all_rows(dataset.size());
  std::iota(all_rows.begin(), all_rows.end(), 0);
  std::vector<double> all;
  for (std::size_t j = 0; j < dataset.num_categories(); ++j) {
    auto v = metric_on_rows(preds, dataset.labels, all_rows, j, metric);
    report.per_category.push_back(v);
    if (v) {
      all.push_back(*v);
    } else {
      report.warnings.push_back("no positives for " + names[j] +
                                "; excluded from the all-categories mean");
    }
  }
  report.all_mean = mean_of(all);

  if (non_biased) {
    std::vector<double> nb;
    for (auto j : *non_biased) {
      if (j >= dataset.num_categories()) {
        throw DataError("non-biased category index out of range");
      }
      if (report.per_category[j]) nb.push_back(*report.per_category[j]);
    }
    report.non_biased_mean = mean_of(nb);
  }
  return report;
}

PredictionMatrix predict(model::Network& network,
                         const data::LabeledDataset& dataset,
                         const data::PreprocessOptions& preprocess,
                         std::size_t batch_size) {
  PredictionMatrix out;
  out.scores.resize(static_cast<Eigen::Index>(dataset.size()), network.num_classes());
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    const std::size_t end = std::min(dataset.size(), start + batch_size);
    std::vector<data::Image> images;
    for (std::size_t i = start; i < end; ++i) {
      images.push_back(data::preprocess_eval(dataset.load_image(i), preprocess));
    }
    const model::Tensor4 batch = train::pack_images(images);
    const auto pass = network.forward(batch);
    for (Eigen::Index i = 0; i < pass.logits.rows(); ++i) {
      for (Eigen::Index j = 0; j < pass.logits.cols(); ++j) {
        out.scores(static_cast<Eigen::Index>(start) + i, j) =
            train::sigmoid(pass.logits(i, j));
      }
    }
  }
  return out;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : report.per_pair) {
    pairs.push_back({{"b", p.b},
                     {"c", p.c},
                     {"b_name", p.b_name},
                     {"c_name", p.c_name},
                     {"exclusive", opt(p.exclusive)},
                     {"cooccur", opt(p.cooccur)}});
  }
  nlohmann::json per_category = nlohmann::json::array();
  for (const auto& v : report.per_category) per_category.push_back(opt(v));
  return {{"metric", to_string(report.metric)},
          {"pairs", pairs},
          {"aggregates",
           {{"exclusive", opt(report.exclusive_mean)},
            {"cooccur", opt(report.cooccur_mean)},
            {"all", opt(report.all_mean)},
            {"non_biased", opt(report.non_biased_mean)}}},
          {"per_category", per_category},
          {"warnings", report.warnings}};
}

void write_report_json(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write report " + path.string());
  out << report_to_json(report).dump(2) << '\n';
}

void write_report_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write report " + path.string());
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string();
    std::ostringstream os;
    os.precision(17);
    os << *v;
    return os.str();
  };
  out << "b,c,exclusive,cooccur\n";
  for (const auto& p : report.per_pair) {
    out << p.b_name << ',' << p.c_name << ',' << cell(p.exclusive) << ','
        << cell(p.cooccur) << '\n';
  }
}

CosineReport cosine_similarity_report(const model::ClassifierHead& head,
                                      const std::optional<model::FeatureSplit>& split,
                                      std::span<const BiasedPair> pairs,
                                      std::uint64_t seed) {
  std::vector<std::size_t> o_rows, s_rows;
  if (split) {
    o_rows = split->o_rows;
    s_rows = split->s_rows;
  } else {
    const auto d = static_cast<std::size_t>(head.feature_dim());
    auto fs = model::make_feature_split(static_cast<int>(d), model::SplitMode::random,
                                        d / 2, seed);
    o_rows = fs.o_rows;
    s_rows = fs.s_rows;
  }
  if (o_rows.size() != s_rows.size()) {
    throw DataError("cosine similarity needs equal-size W_o and W_s halves");
  }
  CosineReport out;
  std::vector<std::size_t> seen;
  std::vector<double> values;
  for (const auto& p : pairs) {
    if (std::find(seen.begin(), seen.end(), p.b) != seen.end()) continue;
    seen.push_back(p.b);
    double dot = 0.0, no = 0.0, ns = 0.0;
    const auto col = static_cast<Eigen::Index>(p.b);
    for (std::size_t k = 0; k < o_rows.size(); ++k) {
      const double a = head.weight(static_cast<Eigen::Index>(o_rows[k]), col);
      const double s = head.weight(static_cast<Eigen::Index>(s_rows[k]), col);
      dot += a * s;
      no += a * a;
      ns += s * s;
    }
    if (no == 0.0 || ns == 0.0) {
      out.excluded.push_back(p.b);
      continue;
    }
    const double cos = dot / (std::sqrt(no) * std::sqrt(ns));
    out.per_category.emplace_back(p.b, cos);
    values.push_back(cos);
  }
  out.mean = mean_of(values);
  return out;
}

CrossDatasetReport cross_dataset_evaluate(
    const PredictionMatrix& preds,
    std::span<const std::string> model_categories,
    const data::LabeledDataset& external, std::span<const BiasedPair> pairs) {
  if (preds.rows() != external.size() || preds.cols() != model_categories.size()) {
    throw DataError("external predictions must be external rows × model categories");
  }
  CrossDatasetReport out;
  std::vector<std::size_t> seen;
  for (const auto& p : pairs) {
    if (p.b >= model_categories.size()) {
      throw DataError("pair category index out of range for the model");
    }
    if (std::find(seen.begin(), seen.end(), p.b) != seen.end()) continue;
    seen.push_back(p.b);
    const auto ext = external.category_index(model_categories[p.b]);
    if (!ext) continue;
    CrossCategoryResult r{model_categories[p.b], p.b, *ext, std::nullopt};
    std::vector<double> s(external.size());
    for (std::size_t i = 0; i < external.size(); ++i) {
      s[i] = preds.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p.b));
    }
    r.ap = average_precision(s, external.labels.column(*ext));
    out.categories.push_back(std::move(r));
  }
  if (out.categories.empty()) {
    throw DataError("no biased category name overlaps the external vocabulary");
  }
  std::sort(out.categories.begin(), out.categories.end(),
            [](const auto& a, const auto& b) { return a.model_column < b.model_column; });
  std::vector<double> aps;
  for (const auto& c : out.categories) {
    if (c.ap) aps.push_back(*c.ap);
  }
  out.mean = mean_of(aps);
  return out;
}

}  // namespace ctxbias::eval
