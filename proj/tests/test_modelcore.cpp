#include <doctest.h>

#include <fstream>

#include "ctxbias/backbone.hpp"
#include "ctxbias/error.hpp"
#include "ctxbias/head.hpp"
#include "ctxbias/losses.hpp"
#include "ctxbias/network.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace ctxbias;
using namespace ctxbias::model;

namespace {

Tensor4 random_tensor(Rng& rng, int n, int c, int h, int w) {
  Tensor4 t(n, c, h, w);
  for (auto& v : t.data) v = rng.uniform();
  return t;
}

Network tiny_network(std::uint64_t seed, int classes = 4) {
  Rng rng(seed);
  const nlohmann::json desc = {{"kind", "small_cnn"}, {"channels", {3, 4}}};
  return Network(make_backbone(desc, rng), classes, rng);
}

double cam_oracle(const Tensor4& f, int i, const Eigen::MatrixXd& w, std::size_t r, int y, int x) {
  double s = 0.0;
  for (int d = 0; d < f.c; ++d) s += w(d, static_cast<Eigen::Index>(r)) * f.at(i, d, y, x);
  return s;
}

}  // namespace

TEST_CASE("forward_scores") {
  ClassifierHead head(3, 3);
  head.weight.setIdentity();
  for (int k = 0; k < 3; ++k) {
    Eigen::VectorXd e = Eigen::VectorXd::Unit(3, k);
    CHECK(forward_scores(e, head) == e);
  }
  Rng rng(1);
  ClassifierHead r(7, 5);
  r.weight = oracle::random_matrix(rng, 7, 5, -1, 1);
  r.bias = oracle::random_matrix(rng, 5, 1, -1, 1);
  const Eigen::VectorXd x = oracle::random_matrix(rng, 7, 1, -1, 1);
  const auto y = forward_scores(x, r);
  for (int j = 0; j < 5; ++j) {
    double s = r.bias(j);
    for (int d = 0; d < 7; ++d) s += r.weight(d, j) * x(d);
    CHECK(std::abs(y(j) - s) <= 1e-10);
  }
  CHECK(forward_scores(Eigen::VectorXd(Eigen::VectorXd::Zero(7)), r) == r.bias);
  r.use_bias = false;
  CHECK(forward_scores(Eigen::VectorXd(Eigen::VectorXd::Zero(7)), r) == Eigen::VectorXd::Zero(5));
  CHECK_THROWS(forward_scores(Eigen::VectorXd(Eigen::VectorXd::Zero(6)), r));
}

TEST_CASE("split_head") {
  ClassifierHead head(2048, 3);
  const auto sh = split_head(head, SplitMode::middle, 1024, 0);
  REQUIRE(sh.split.o_rows.size() == 1024);
  for (std::size_t k = 0; k < 1024; ++k) CHECK(sh.split.o_rows[k] == k);
  CHECK(sh.split.s_rows.front() == 1024);

  ClassifierHead small(4, 2);
  const auto a = split_head(small, SplitMode::random, 1, 77);
  const auto b = split_head(small, SplitMode::random, 1, 77);
  CHECK(a.split.o_rows.size() == 1);
  CHECK(a.split.o_rows == b.split.o_rows);
  CHECK_THROWS(split_head(small, SplitMode::middle, 4, 0));
  CHECK_THROWS(split_head(small, SplitMode::middle, 0, 0));

  Rng rng(3);
  ClassifierHead r(16, 6, false);
  r.weight = oracle::random_matrix(rng, 16, 6, -1, 1);
  for (auto mode : {SplitMode::middle, SplitMode::random}) {
    const auto s = split_head(r, mode, 5, 9);
    for (int t = 0; t < 100; ++t) {
      const Eigen::VectorXd x = oracle::random_matrix(rng, 16, 1, -2, 2);
      const Eigen::VectorXd parts = s.w_o().transpose() * gather(x, s.split.o_rows) +
                                    s.w_s().transpose() * gather(x, s.split.s_rows);
      CHECK((parts - r.weight.transpose() * x).cwiseAbs().maxCoeff() <= 1e-10);
    }
  }
}

TEST_CASE("compute_cam") {
  Rng rng(5);
  Tensor4 flat(1, 3, 4, 5, 0.7);
  const auto w = oracle::random_matrix(rng, 3, 2, -1, 1);
  const auto cam = compute_cam(view_sample(flat, 0), w, 1, true);
  CHECK(cam == Eigen::MatrixXd::Zero(4, 5));

  Tensor4 one(1, 3, 4, 5);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 5; ++x) one.at(0, 1, y, x) = rng.uniform();
  }
  Eigen::MatrixXd w1 = Eigen::MatrixXd::Zero(3, 2);
  w1(1, 0) = 1.0;
  const auto raw = compute_cam(view_sample(one, 0), w1, 0, false);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 5; ++x) CHECK(raw(y, x) == one.at(0, 1, y, x));
  }

  const auto f = random_tensor(rng, 2, 6, 3, 4);
  const auto wr = oracle::random_matrix(rng, 6, 3, -1, 1);
  for (int i = 0; i < 2; ++i) {
    for (std::size_t r = 0; r < 3; ++r) {
      const auto c = compute_cam(view_sample(f, i), wr, r, false);
      const auto n = compute_cam(view_sample(f, i), wr, r, true);
      double lo = 1e300, hi = -1e300;
      for (int y = 0; y < 3; ++y) {
        for (int x = 0; x < 4; ++x) {
          const double o = cam_oracle(f, i, wr, r, y, x);
          CHECK(std::abs(c(y, x) - o) <= 1e-8);
          lo = std::min(lo, o);
          hi = std::max(hi, o);
        }
      }
      for (int y = 0; y < 3; ++y) {
        for (int x = 0; x < 4; ++x) {
          CHECK(std::abs(n(y, x) - (cam_oracle(f, i, wr, r, y, x) - lo) / (hi - lo)) <= 1e-8);
        }
      }
    }
  }
  std::vector<std::size_t> rows{0, 2, 5};
  const auto part = compute_cam(view_sample(f, 0), wr, 1, false, std::span<const std::size_t>(rows));
  double s = 0.0;
  for (auto d : rows) s += wr(static_cast<Eigen::Index>(d), 1) * f.at(0, static_cast<int>(d), 2, 3);
  CHECK(std::abs(part(2, 3) - s) <= 1e-12);
  CHECK_THROWS(compute_cam(view_sample(f, 0), wr, 3, true));
}

TEST_CASE("normalization backward matches finite differences") {
  Rng rng(21);
  for (int t = 0; t < 20; ++t) {
    const auto raw = oracle::random_matrix(rng, 3, 4, -1, 1);
    const auto g = oracle::random_matrix(rng, 3, 4, -1, 1);
    const auto analytic = train::normalize_backward(raw, g);
    const double eps = 1e-7;
    for (int y = 0; y < 3; ++y) {
      for (int x = 0; x < 4; ++x) {
        Eigen::MatrixXd up = raw, down = raw;
        up(y, x) += eps;
        down(y, x) -= eps;
        const double fd = ((normalize_cam(up).normalized.array() * g.array()).sum() -
                           (normalize_cam(down).normalized.array() * g.array()).sum()) /
                          (2 * eps);
        CHECK(std::abs(fd - analytic(y, x)) <= 1e-5);
      }
    }
  }
}

TEST_CASE("feature_split_forward") {
  Rng rng(6);
  ClassifierHead head(6, 3);
  head.weight = oracle::random_matrix(rng, 6, 3, -1, 1);
  head.bias = oracle::random_matrix(rng, 3, 1, -1, 1);
  auto split = make_feature_split(6, SplitMode::middle, 2, 0);
  const auto x = oracle::random_matrix(rng, 5, 6, -1, 1);

  SUBCASE("own x_s as the history mean") {
    split.history.push(gather(x.row(2).transpose(), split.s_rows));
    const auto s = feature_split_forward(x, head, split);
    CHECK((s.plain.row(2) - s.substituted.row(2)).cwiseAbs().maxCoeff() <= 1e-14);
  }
  SUBCASE("zero context") {
    Eigen::MatrixXd xz = x;
    for (auto d : split.s_rows) xz.col(static_cast<Eigen::Index>(d)).setZero();
    head.use_bias = false;
    const auto s = feature_split_forward(xz, head, split);
    const Eigen::MatrixXd wo = gather_rows(head.weight, split.o_rows);
    const Eigen::MatrixXd expected = gather_cols(xz, split.o_rows) * wo;
    CHECK((s.plain - expected).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((s.substituted - expected).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("concatenation oracle") {
    auto rsplit = make_feature_split(6, SplitMode::random, 3, 4);
    const Eigen::VectorXd bar = oracle::random_matrix(rng, 3, 1, -1, 1);
    rsplit.history.push(bar);
    const auto s = feature_split_forward(x, head, rsplit);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      Eigen::VectorXd joined(6);
      for (std::size_t k = 0; k < 3; ++k) {
        joined(static_cast<Eigen::Index>(rsplit.o_rows[k])) =
            x(i, static_cast<Eigen::Index>(rsplit.o_rows[k]));
        joined(static_cast<Eigen::Index>(rsplit.s_rows[k])) = bar(static_cast<Eigen::Index>(k));
      }
      for (int j = 0; j < 3; ++j) {
        double v = head.bias(j);
        for (int d = 0; d < 6; ++d) v += head.weight(d, j) * joined(d);
        CHECK(std::abs(s.substituted(i, j) - v) <= 1e-12);
      }
    }
  }
}

TEST_CASE("context history") {
  XsHistory h(3, 10);
  CHECK(h.mean() == Eigen::VectorXd::Zero(3));
  const Eigen::Vector3d v(1, 2, 3);
  h.push(v);
  CHECK(h.mean() == v);

  XsHistory e(1, 10);
  e.push(Eigen::VectorXd::Constant(1, 1000.0));
  for (int k = 0; k < 10; ++k) e.push(Eigen::VectorXd::Constant(1, 1.0));
  CHECK(e.size() == 10);
  CHECK(e.mean()(0) == 1.0);

  Rng rng(7);
  XsHistory r(4, 10);
  std::vector<Eigen::VectorXd> pushed;
  for (int k = 0; k < 10; ++k) {
    pushed.push_back(oracle::random_matrix(rng, 4, 1, -1, 1));
    r.push(pushed.back());
  }
  for (int d = 0; d < 4; ++d) {
    std::vector<double> col;
    for (const auto& p : pushed) col.push_back(p(d));
    CHECK(std::abs(r.mean()(d) - oracle::mean(col)) <= 1e-12);
  }
  CHECK_THROWS(r.push(Eigen::VectorXd::Zero(3)));
}

TEST_CASE("backbone gradients match finite differences") {
  auto net = tiny_network(3);
  Rng rng(4);
  const auto images = random_tensor(rng, 2, 3, 8, 8);
  const auto pass0 = net.forward(images);
  const auto probe = random_tensor(rng, pass0.features.n, pass0.features.c,
                                   pass0.features.h, pass0.features.w);
  const auto r_pool = oracle::random_matrix(rng, 2, pass0.pooled.cols(), -1, 1);
  auto loss = [&](Network& n) {
    const auto p = n.forward(images);
    double s = 0.0;
    for (std::size_t k = 0; k < p.features.data.size(); ++k) s += p.features.data[k] * probe.data[k];
    return s + (p.pooled.array() * r_pool.array()).sum();
  };
  net.zero_grad();
  const auto pass = net.forward(images);
  net.backward_features(pass, r_pool, &probe);
  const auto check = testing::finite_difference(net, loss);
  CHECK(check.checked == testing::parameter_count(net));
  CHECK(check.rel_error <= 1e-6);
}

TEST_CASE("sgd momentum follows the heavy-ball update") {
  std::vector<double> value{1.0, -2.0}, grad{0.5, 0.25};
  std::vector<ParamView> params{{"p", value, grad}};
  SgdMomentum opt(0.9, 0.1);
  opt.step(params, 0.1);
  CHECK(value[0] == doctest::Approx(1.0 - 0.1 * (0.5 + 0.1)));
  const double v1 = 0.5 + 0.1;
  const double after_first = value[0];
  opt.step(params, 0.1);
  CHECK(value[0] == doctest::Approx(after_first - 0.1 * (0.9 * v1 + 0.5 + 0.1 * after_first)));
}

TEST_CASE("network copies are independent") {
  auto a = tiny_network(1);
  Network b = a;
  b.head.weight(0, 0) += 1.0;
  b.parameters().front().value[0] += 1.0;
  CHECK(a.head.weight(0, 0) != b.head.weight(0, 0));
  CHECK(a.parameters().front().value[0] != b.parameters().front().value[0]);
}

TEST_CASE("checkpoint round trip") {
  testing::TempDir dir("ckpt");
  auto net = tiny_network(8, 3);
  net.split = make_feature_split(4, SplitMode::random, 2, 5, 10);
  Rng rng(2);
  net.split->history.push(oracle::random_matrix(rng, 2, 1));
  std::vector<std::vector<double>> velocity;
  for (const auto& p : net.parameters()) {
    velocity.emplace_back();
    for (std::size_t j = 0; j < p.value.size(); ++j) velocity.back().push_back(rng.uniform(-1, 1));
  }
  ModelState state{net, velocity, 7, 42, {{"method", "feature_split"}}};
  save_checkpoint(state, dir / "a.ckpt");
  auto back = load_checkpoint(dir / "a.ckpt");
  CHECK(back.epoch == 7);
  CHECK(back.seed == 42);
  CHECK(back.meta == state.meta);
  CHECK(back.optimizer_state == state.optimizer_state);
  REQUIRE(back.network.split.has_value());
  CHECK(back.network.split->o_rows == net.split->o_rows);
  CHECK(back.network.split->history.mean() == net.split->history.mean());

  const auto images = random_tensor(rng, 3, 3, 8, 8);
  CHECK(back.network.forward(images).logits == state.network.forward(images).logits);

  save_checkpoint(back, dir / "b.ckpt");
  CHECK(testing::read_file(dir / "a.ckpt") == testing::read_file(dir / "b.ckpt"));

  auto bytes = testing::read_file(dir / "a.ckpt");
  testing::write_file(dir / "trail.ckpt", bytes + "x");
  CHECK_THROWS(load_checkpoint(dir / "trail.ckpt"));
  testing::write_file(dir / "cut.ckpt", bytes.substr(0, bytes.size() - 9));
  CHECK_THROWS(load_checkpoint(dir / "cut.ckpt"));
  testing::write_file(dir / "magic.ckpt", "NOTACKPT" + bytes.substr(8));
  CHECK_THROWS(load_checkpoint(dir / "magic.ckpt"));

  Rng other(1);
  Network wide(make_backbone({{"kind", "small_cnn"}, {"channels", {3, 6}}}, other), 3, other);
  CHECK_THROWS_AS(restore_weights(wide, net), DataError);
  auto same = tiny_network(99, 3);
  restore_weights(same, net);
  CHECK(same.forward(images).logits == net.forward(images).logits);
}

TEST_CASE("backbone registry") {
  Rng rng(1);
  CHECK_THROWS(make_backbone({{"kind", "resnet9000"}}, rng));
  register_backbone("test_alias", [](const nlohmann::json&, Rng& r) {
    return make_backbone({{"kind", "small_cnn"}, {"channels", {2, 3}}}, r);
  });
  auto b = make_backbone({{"kind", "test_alias"}}, rng);
  CHECK(b->feature_dim() == 3);
}
