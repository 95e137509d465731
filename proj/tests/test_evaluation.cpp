#include <doctest.h>

#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "ctxbias/error.hpp"
#include "ctxbias/batching.hpp"
#include "ctxbias/evaluation.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace ctxbias;
using namespace ctxbias::eval;

namespace {

bias::BiasedPair make_pair(std::size_t b, std::size_t c) {
  bias::BiasedPair p;
  p.b = b;
  p.c = c;
  return p;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

}  // namespace

TEST_CASE("average precision") {
  const std::vector<double> perfect{0.9, 0.8, 0.3, 0.1};
  const std::vector<std::uint8_t> y{1, 1, 0, 0};
  CHECK(*average_precision(perfect, y) == 1.0);

  // Positives at ranks 2 and 4: (1/2 + 2/4) / 2.
  const std::vector<double> s{0.9, 0.8, 0.3, 0.1};
  const std::vector<std::uint8_t> y2{0, 1, 0, 1};
  CHECK(*average_precision(s, y2) == doctest::Approx(0.5).epsilon(1e-15));

  const std::vector<std::uint8_t> none{0, 0, 0, 0};
  CHECK_FALSE(average_precision(s, none).has_value());

  // Ties keep input order: the earlier negative ranks first.
  const std::vector<double> tied{0.5, 0.5};
  CHECK(*average_precision(tied, std::vector<std::uint8_t>{0, 1}) == 0.5);
  CHECK(*average_precision(tied, std::vector<std::uint8_t>{1, 0}) == 1.0);

  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(60);
    std::vector<double> sc(n);
    std::vector<std::uint8_t> lab(n);
    for (std::size_t i = 0; i < n; ++i) {
      sc[i] = std::round(rng.uniform() * 20.0) / 20.0;
      lab[i] = rng.bernoulli(0.4);
    }
    const auto got = average_precision(sc, lab);
    const auto want = oracle::average_precision(sc, lab);
    REQUIRE(got.has_value() == want.has_value());
    if (got) CHECK(std::abs(*got - *want) <= 1e-12);
  }
}

TEST_CASE("top-3 recall") {
  data::LabelMatrix y(2, 3);
  y(0, 0) = y(1, 0) = 1;
  Eigen::MatrixXd s(2, 3);
  s << 0.1, 0.5, 0.9,
       0.2, 0.3, 0.4;
  const auto rows = all_rows(2);
  CHECK(*top_k_recall(s, y, rows, 0, 3) == 1.0);

  data::LabelMatrix y5(1, 5);
  y5(0, 4) = 1;
  Eigen::MatrixXd s5(1, 5);
  s5 << 0.9, 0.8, 0.7, 0.6, 0.1;
  CHECK(*top_k_recall(s5, y5, all_rows(1), 4, 3) == 0.0);
  s5 << 0.5, 0.5, 0.5, 0.5, 0.5;
  CHECK(*top_k_recall(s5, y5, all_rows(1), 4, 3) == 0.0);
  y5(0, 4) = 0;
  y5(0, 2) = 1;
  CHECK(*top_k_recall(s5, y5, all_rows(1), 2, 3) == 1.0);
  CHECK_FALSE(top_k_recall(s5, y5, all_rows(1), 0, 3).has_value());

  Rng rng(32);
  for (int trial = 0; trial < 50; ++trial) {
    const auto lab = oracle::random_labels(rng, 50, 10, 0.3);
    Eigen::MatrixXd sc = oracle::random_matrix(rng, 50, 10);
    for (Eigen::Index i = 0; i < 50; ++i) {
      for (Eigen::Index j = 0; j < 10; ++j) sc(i, j) = std::round(sc(i, j) * 10.0) / 10.0;
    }
    std::vector<std::size_t> subset;
    for (std::size_t i = 0; i < 50; ++i) {
      if (rng.bernoulli(0.7)) subset.push_back(i);
    }
    for (std::size_t b = 0; b < 10; ++b) {
      const auto got = top_k_recall(sc, lab, subset, b, 3);
      const auto want = oracle::top_k_recall(sc, lab, subset, b, 3);
      REQUIRE(got.has_value() == want.has_value());
      if (got) CHECK(std::abs(*got - *want) <= 1e-12);
    }
  }
}

TEST_CASE("build_distribution") {
  data::PairImageSets sets;
  sets.cooccur = {1, 4, 6};
  sets.exclusive = {2, 7};
  sets.other = {0, 3, 5};
  CHECK(build_distribution(sets, DistributionKind::exclusive) ==
        std::vector<std::size_t>{0, 2, 3, 5, 7});
  CHECK(build_distribution(sets, DistributionKind::cooccur) ==
        std::vector<std::size_t>{0, 1, 3, 4, 5, 6});
  sets.other.clear();
  CHECK(build_distribution(sets, DistributionKind::exclusive) == sets.exclusive);

  Rng rng(33);
  const auto y = oracle::random_labels(rng, 300, 4, 0.5);
  const auto ds = testing::dataset_from_labels(y);
  const auto s = data::image_sets_for_pair(ds, 0, 1);
  const auto ex = build_distribution(s, DistributionKind::exclusive);
  const auto co = build_distribution(s, DistributionKind::cooccur);
  CHECK(ex.size() == s.exclusive.size() + s.other.size());
  CHECK(co.size() == s.cooccur.size() + s.other.size());
  CHECK(ex.size() + co.size() == 300 + s.other.size());
  CHECK(std::is_sorted(ex.begin(), ex.end()));
  CHECK(std::is_sorted(co.begin(), co.end()));
  for (auto r : ex) CHECK_FALSE((y(r, 0) && y(r, 1)));
  for (auto r : co) CHECK_FALSE((y(r, 0) && !y(r, 1)));
}

TEST_CASE("evaluate") {
  Rng rng(34);
  const auto y = oracle::random_labels(rng, 120, 5, 0.4);
  const auto ds = testing::dataset_from_labels(y);
  const std::vector<bias::BiasedPair> pairs{make_pair(0, 1), make_pair(2, 3)};

  SUBCASE("perfect predictions") {
    PredictionMatrix p{Eigen::MatrixXd(120, 5)};
    for (std::size_t i = 0; i < 120; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        p.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = y(i, j) ? 0.9 : 0.1;
      }
    }
    const auto r = evaluate(p, ds, pairs, MetricKind::map, std::vector<std::size_t>{4});
    CHECK(r.per_pair.size() == 2);
    CHECK(*r.exclusive_mean == 1.0);
    CHECK(*r.cooccur_mean == 1.0);
    CHECK(*r.all_mean == 1.0);
    CHECK(*r.non_biased_mean == 1.0);
    CHECK(r.per_category.size() == 5);
    CHECK(r.warnings.empty());
  }
  SUBCASE("matches per-distribution oracle") {
    PredictionMatrix p{oracle::random_matrix(rng, 120, 5)};
    for (auto metric : {MetricKind::map, MetricKind::top3_recall}) {
      const auto r = evaluate(p, ds, pairs, metric);
      double ex_sum = 0.0, co_sum = 0.0;
      for (std::size_t k = 0; k < pairs.size(); ++k) {
        const auto s = data::image_sets_for_pair(ds, pairs[k].b, pairs[k].c);
        auto score = [&](const std::vector<std::size_t>& rows) {
          if (metric == MetricKind::top3_recall) {
            return *oracle::top_k_recall(p.scores, y, rows, pairs[k].b, 3);
          }
          std::vector<double> sc;
          std::vector<std::uint8_t> lab;
          for (auto r : rows) {
            sc.push_back(p.scores(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(pairs[k].b)));
            lab.push_back(y(r, pairs[k].b));
          }
          return *oracle::average_precision(sc, lab);
        };
        const double ex = score(build_distribution(s, DistributionKind::exclusive));
        const double co = score(build_distribution(s, DistributionKind::cooccur));
        CHECK(std::abs(*r.per_pair[k].exclusive - ex) <= 1e-12);
        CHECK(std::abs(*r.per_pair[k].cooccur - co) <= 1e-12);
        ex_sum += ex;
        co_sum += co;
      }
      CHECK(std::abs(*r.exclusive_mean - ex_sum / 2) <= 1e-12);
      CHECK(std::abs(*r.cooccur_mean - co_sum / 2) <= 1e-12);
    }
  }
  SUBCASE("constant predictions rank in row order") {
    PredictionMatrix p{Eigen::MatrixXd::Constant(120, 5, 0.5)};
    const auto r = evaluate(p, ds, pairs, MetricKind::map);
    std::vector<double> flat(120, 0.5);
    std::vector<std::uint8_t> lab(120);
    for (std::size_t i = 0; i < 120; ++i) lab[i] = y(i, 4);
    CHECK(std::abs(*r.per_category[4] - *oracle::average_precision(flat, lab)) <= 1e-12);
  }
  SUBCASE("undefined metrics are reported") {
    auto d = testing::make_dataset({{1, 1, 0}, {0, 0, 1}, {1, 1, 1}});
    PredictionMatrix p{Eigen::MatrixXd::Constant(3, 3, 0.5)};
    const std::vector<bias::BiasedPair> ps{make_pair(0, 1)};
    const auto r = evaluate(p, d, ps, MetricKind::map);
    CHECK_FALSE(r.per_pair[0].exclusive.has_value());
    CHECK_FALSE(r.exclusive_mean.has_value());
    CHECK(r.cooccur_mean.has_value());
    CHECK_FALSE(r.warnings.empty());
  }
  SUBCASE("shape mismatch") {
    PredictionMatrix p{Eigen::MatrixXd::Constant(10, 5, 0.5)};
    CHECK_THROWS_AS(evaluate(p, ds, pairs, MetricKind::map), DataError);
  }
}

TEST_CASE("report files") {
  testing::TempDir dir("report");
  const auto ds = testing::make_dataset({{1, 1}, {1, 0}, {0, 1}, {0, 0}});
  PredictionMatrix p{Eigen::MatrixXd(4, 2)};
  p.scores << 0.9, 0.8, 0.6, 0.1, 0.2, 0.7, 0.1, 0.3;
  const std::vector<bias::BiasedPair> pairs{make_pair(0, 1)};
  const auto r = evaluate(p, ds, pairs, MetricKind::map);
  write_report_json(r, dir / "r.json");
  write_report_csv(r, dir / "r.csv");
  const auto doc = nlohmann::json::parse(testing::read_file(dir / "r.json"));
  CHECK(doc["metric"] == "mAP");
  CHECK(doc["pairs"][0]["exclusive"] == 1.0);
  CHECK(doc["aggregates"]["non_biased"].is_null());
  CHECK(testing::read_file(dir / "r.csv") == "b,c,exclusive,cooccur\nc0,c1,1,1\n");
  CHECK(metric_from_string("top3_recall") == MetricKind::top3_recall);
  CHECK_THROWS_AS(metric_from_string("f1"), ConfigError);
}

TEST_CASE("cosine similarity of split halves") {
  model::ClassifierHead head(4, 2);
  head.weight << 1, 1,
                 2, 1,
                 1, 1,
                 2, 0;
  const auto split = model::make_feature_split(4, model::SplitMode::middle, 2, 0);
  const std::vector<bias::BiasedPair> pairs{make_pair(0, 1), make_pair(1, 0)};
  const auto r = cosine_similarity_report(head, split, pairs, 0);
  REQUIRE(r.per_category.size() == 2);
  CHECK(r.per_category[0].second == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(r.per_category[1].second == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));

  head.weight << 1, 0,
                 0, 0,
                 0, 1,
                 1, 0;
  const auto orth = cosine_similarity_report(head, split, pairs, 0);
  CHECK(orth.per_category[0].second == doctest::Approx(0.0));
  CHECK(orth.excluded == std::vector<std::size_t>{1});

  Rng rng(35);
  model::ClassifierHead big(10, 3);
  big.weight = oracle::random_matrix(rng, 10, 3, -1, 1);
  const std::vector<bias::BiasedPair> one{make_pair(2, 0)};
  const auto rnd = cosine_similarity_report(big, std::nullopt, one, 7);
  const auto fs = model::make_feature_split(10, model::SplitMode::random, 5, 7);
  long double dot = 0, a = 0, b = 0;
  for (std::size_t k = 0; k < 5; ++k) {
    const double wo = big.weight(static_cast<Eigen::Index>(fs.o_rows[k]), 2);
    const double ws = big.weight(static_cast<Eigen::Index>(fs.s_rows[k]), 2);
    dot += wo * ws;
    a += wo * wo;
    b += ws * ws;
  }
  CHECK(std::abs(*rnd.mean - static_cast<double>(dot / std::sqrt(a * b))) <= 1e-12);
}

TEST_CASE("cross-dataset evaluation") {
  const std::vector<std::string> model_names{"person", "skateboard", "car", "bus", "road"};
  const std::vector<bias::BiasedPair> pairs{make_pair(1, 0), make_pair(2, 4), make_pair(3, 4)};
  auto external = testing::make_dataset({{1, 0, 1, 0}, {0, 1, 0, 1}, {1, 1, 0, 0}, {0, 0, 1, 1}});
  external.category_names = {"bus", "car", "skateboard", "tree"};

  PredictionMatrix perfect{Eigen::MatrixXd::Zero(4, 5)};
  for (std::size_t i = 0; i < 4; ++i) {
    perfect.scores(static_cast<Eigen::Index>(i), 1) = external.labels(i, 2);
    perfect.scores(static_cast<Eigen::Index>(i), 2) = external.labels(i, 1);
    perfect.scores(static_cast<Eigen::Index>(i), 3) = external.labels(i, 0);
  }
  const auto r = cross_dataset_evaluate(perfect, model_names, external, pairs);
  REQUIRE(r.categories.size() == 3);
  CHECK(r.categories[0].name == "skateboard");
  CHECK(r.categories[0].external_column == 2);
  CHECK(r.categories[2].name == "bus");
  CHECK(r.categories[2].external_column == 0);
  CHECK(*r.mean == 1.0);

  Rng rng(36);
  PredictionMatrix random{oracle::random_matrix(rng, 4, 5)};
  const auto rr = cross_dataset_evaluate(random, model_names, external, pairs);
  double total = 0.0;
  for (const auto& c : rr.categories) {
    std::vector<double> s;
    std::vector<std::uint8_t> lab;
    for (std::size_t i = 0; i < 4; ++i) {
      s.push_back(random.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c.model_column)));
      lab.push_back(external.labels(i, c.external_column));
    }
    const double want = *oracle::average_precision(s, lab);
    CHECK(std::abs(*c.ap - want) <= 1e-12);
    total += want;
  }
  CHECK(std::abs(*rr.mean - total / 3) <= 1e-12);

  external.category_names = {"a", "b", "c", "d"};
  CHECK_THROWS_AS(cross_dataset_evaluate(random, model_names, external, pairs), DataError);
}

TEST_CASE("predict returns sigmoid scores") {
  Rng rng(37);
  model::Network net(model::make_backbone({{"kind", "small_cnn"}, {"channels", {3, 4}}}, rng), 2, rng);
  auto ds = testing::make_dataset({{1, 0}, {0, 1}, {1, 1}});
  for (std::size_t i = 0; i < 3; ++i) {
    data::Image img(8, 8, 3);
    for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
    ds.images.push_back(img);
  }
  data::PreprocessOptions pre;
  pre.resize_shorter = 8;
  pre.crop_size = 8;
  const auto p = predict(net, ds, pre, 2);
  CHECK(p.rows() == 3);
  CHECK(p.cols() == 2);
  std::vector<data::Image> imgs;
  for (const auto& im : ds.images) imgs.push_back(data::preprocess_eval(im, pre));
  const auto logits = net.forward(train::pack_images(imgs)).logits;
  for (Eigen::Index i = 0; i < 3; ++i) {
    for (Eigen::Index j = 0; j < 2; ++j) {
      CHECK(p.scores(i, j) == doctest::Approx(1.0 / (1.0 + std::exp(-logits(i, j)))).epsilon(1e-12));
    }
  }
}
