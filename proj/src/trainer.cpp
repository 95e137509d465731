#include "ctxbias/trainer.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <numeric>

#include "ctxbias/error.hpp"

namespace ctxbias::train {

namespace {

constexpr std::array<Method, 9> kMethods = {
    Method::standard,        Method::remove_labels,    Method::remove_images,
    Method::split_biased,    Method::weighted,         Method::negative_penalty,
    Method::class_balancing, Method::cam_based,        Method::feature_split,
};

constexpr std::array<const char*, 9> kMethodNames = {
    "standard",        "remove_labels",    "remove_images",
    "split_biased",    "weighted",         "negative_penalty",
    "class_balancing", "cam_based",        "feature_split",
};

}  // namespace

std::string to_string(Method method) {
  return kMethodNames[static_cast<std::size_t>(method)];
}

Method method_from_string(const std::string& name) {
  for (std::size_t k = 0; k < kMethods.size(); ++k) {
    if (name == kMethodNames[k]) return kMethods[k];
  }
  throw ConfigError("unknown method '" + name + "'");
}

std::span<const Method> all_methods() { return kMethods; }

std::string to_string(EpochSelection selection) {
  switch (selection) {
    case EpochSelection::last: return "last";
    case EpochSelection::lowest_val_loss: return "lowest_val_loss";
    case EpochSelection::best_exclusive: return "best_exclusive";
    case EpochSelection::best_exclusive_plus_cooccur: return "best_exclusive_plus_cooccur";
  }
  return "last";
}

EpochSelection selection_from_string(const std::string& name) {
  for (auto s : {EpochSelection::last, EpochSelection::lowest_val_loss,
                 EpochSelection::best_exclusive,
                 EpochSelection::best_exclusive_plus_cooccur}) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown epoch selection '" + name + "'");
}

MethodSpec MethodSpec::defaults(Method method) {
  MethodSpec spec;
  spec.method = method;
  auto& hp = spec.hp;
  if (method == Method::standard) {
    hp.epochs = 100;
    hp.lr = 0.1;
    hp.lr_drop_epoch = 60;
  } else if (method == Method::split_biased) {
    hp.epochs = 120;
    hp.lr = 0.1;
    hp.lr_drop_epoch = 60;
  } else {
    hp.epochs = 20;
    hp.lr = 0.01;
  }
  if (method == Method::cam_based) hp.batch_size = 100;
  return spec;
}

nlohmann::json to_json(const Hyperparams& hp) {
  return {{"lambda1", hp.lambda1},
          {"lambda2", hp.lambda2},
          {"alpha_min", hp.alpha_min},
          {"beta", hp.beta},
          {"weight_factor", hp.weight_factor},
          {"d_o", hp.d_o},
          {"split_mode", hp.split_mode == model::SplitMode::middle ? "middle" : "random"},
          {"history_length", hp.history_length},
          {"weighted_loss", hp.weighted_loss},
          {"cam_normalize", hp.cam_normalize},
          {"cam_reduction", hp.cam_reduction == Reduction::mean ? "mean" : "sum"},
          {"recombination", hp.recombination == Recombination::max ? "max" : "sum"},
          {"epochs", hp.epochs},
          {"lr", hp.lr},
          {"lr_drop_epoch", hp.lr_drop_epoch},
          {"lr_drop_factor", hp.lr_drop_factor},
          {"momentum", hp.momentum},
          {"weight_decay", hp.weight_decay},
          {"batch_size", hp.batch_size},
          {"seed", hp.seed}};
}

void update_from_json(Hyperparams& hp, const nlohmann::json& j) {
  try {
    hp.lambda1 = j.value("lambda1", hp.lambda1);
    hp.lambda2 = j.value("lambda2", hp.lambda2);
    hp.alpha_min = j.value("alpha_min", hp.alpha_min);
    hp.beta = j.value("beta", hp.beta);
    hp.weight_factor = j.value("weight_factor", hp.weight_factor);
    hp.d_o = j.value("d_o", hp.d_o);
    hp.history_length = j.value("history_length", hp.history_length);
    hp.weighted_loss = j.value("weighted_loss", hp.weighted_loss);
    hp.cam_normalize = j.value("cam_normalize", hp.cam_normalize);
    hp.epochs = j.value("epochs", hp.epochs);
    hp.lr = j.value("lr", hp.lr);
    hp.lr_drop_epoch = j.value("lr_drop_epoch", hp.lr_drop_epoch);
    hp.lr_drop_factor = j.value("lr_drop_factor", hp.lr_drop_factor);
    hp.momentum = j.value("momentum", hp.momentum);
    hp.weight_decay = j.value("weight_decay", hp.weight_decay);
    hp.batch_size = j.value("batch_size", hp.batch_size);
    hp.seed = j.value("seed", hp.seed);
    if (j.contains("split_mode")) {
      const auto mode = j["split_mode"].get<std::string>();
      if (mode != "middle" && mode != "random") {
        throw ConfigError("split_mode must be 'middle' or 'random'");
      }
      hp.split_mode = mode == "middle" ? model::SplitMode::middle : model::SplitMode::random;
    }
    if (j.contains("cam_reduction")) {
      const auto r = j["cam_reduction"].get<std::string>();
      if (r != "mean" && r != "sum") throw ConfigError("cam_reduction must be 'mean' or 'sum'");
      hp.cam_reduction = r == "mean" ? Reduction::mean : Reduction::sum;
    }
    if (j.contains("recombination")) {
      const auto r = j["recombination"].get<std::string>();
      if (r != "max" && r != "sum") throw ConfigError("recombination must be 'max' or 'sum'");
      hp.recombination = r == "max" ? Recombination::max : Recombination::sum;
    }
  } catch (const nlohmann::json::type_error& e) {
    throw ConfigError(std::string("hyperparameter has the wrong type: ") + e.what());
  }
  if (hp.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (hp.epochs < 0) throw ConfigError("epochs must be non-negative");
}

nlohmann::json to_json(const EpochRecord& r) {
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  return {{"epoch", r.epoch},   {"lr", r.lr},
          {"loss", r.loss},     {"l_bce", r.l_bce},
          {"l_o", r.l_o},       {"l_r", r.l_r},
          {"val_loss", opt(r.val_loss)},
          {"val_exclusive", opt(r.val_exclusive)},
          {"val_cooccur", opt(r.val_cooccur)}};
}

// ---- objectives ----

StepTerms bce_objective(model::Network& net, const Batch& batch, bool backprop) {
  const auto pass = net.forward(batch.images);
  const auto lg = weighted_bce(pass.logits, batch.targets, batch.weights);
  if (backprop) {
    net.grad_weight.noalias() += pass.pooled.transpose() * lg.grad;
    if (net.head.use_bias) net.grad_bias += lg.grad.colwise().sum().transpose();
    const Eigen::MatrixXd grad_pooled = lg.grad * net.head.weight.transpose();
    net.backward_features(pass, grad_pooled);
  }
  return {lg.loss, lg.loss, 0.0, 0.0};
}

BatchPartition partition_batch_cooccur(const Eigen::MatrixXd& targets,
                                       std::span<const bias::BiasedPair> pairs) {
  BatchPartition out;
  for (Eigen::Index i = 0; i < targets.rows(); ++i) {
    const bool any = std::any_of(pairs.begin(), pairs.end(), [&](const auto& p) {
      return targets(i, static_cast<Eigen::Index>(p.b)) > 0.5 &&
             targets(i, static_cast<Eigen::Index>(p.c)) > 0.5;
    });
    (any ? out.cooccur : out.other).push_back(static_cast<std::size_t>(i));
  }
  return out;
}

std::vector<std::uint8_t> exclusive_mask(const Eigen::MatrixXd& targets,
                                         std::span<const bias::BiasedPair> pairs) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(targets.rows()), 0);
  for (Eigen::Index i = 0; i < targets.rows(); ++i) {
    for (const auto& p : pairs) {
      if (targets(i, static_cast<Eigen::Index>(p.b)) > 0.5 &&
          targets(i, static_cast<Eigen::Index>(p.c)) < 0.5) {
        mask[static_cast<std::size_t>(i)] = 1;
      }
    }
  }
  return mask;
}

namespace {

template <typename Fn>
void for_each_active(const Eigen::MatrixXd& targets,
                     std::span<const bias::BiasedPair> pairs, Fn&& fn) {
  for (Eigen::Index i = 0; i < targets.rows(); ++i) {
    for (const auto& p : pairs) {
      if (targets(i, static_cast<Eigen::Index>(p.b)) > 0.5 &&
          targets(i, static_cast<Eigen::Index>(p.c)) > 0.5) {
        fn(static_cast<int>(i), p);
      }
    }
  }
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

std::vector<CamPair> cam_anchor(model::Network& frozen, const Batch& batch,
                                std::span<const bias::BiasedPair> pairs,
                                bool normalize) {
  const auto pass = frozen.forward(batch.images);
  std::vector<CamPair> out;
  for_each_active(batch.targets, pairs, [&](int i, const bias::BiasedPair& p) {
    const auto view = model::view_sample(pass.features, i);
    out.push_back({model::compute_cam(view, frozen.head.weight, p.b, normalize),
                   model::compute_cam(view, frozen.head.weight, p.c, normalize)});
  });
  return out;
}

StepTerms cam_objective(model::Network& net, const Batch& batch,
                        std::span<const bias::BiasedPair> pairs,
                        std::span<const CamPair> anchor, const CamSettings& settings,
                        bool backprop) {
  const auto pass = net.forward(batch.images);
  const auto lg = weighted_bce(pass.logits, batch.targets, batch.weights);

  std::size_t images = 0;
  for (Eigen::Index i = 0; i < batch.targets.rows(); ++i) {
    for (const auto& p : pairs) {
      if (batch.targets(i, static_cast<Eigen::Index>(p.b)) > 0.5 &&
          batch.targets(i, static_cast<Eigen::Index>(p.c)) > 0.5) {
        ++images;
        break;
      }
    }
  }
  const double scale =
      settings.reduction == Reduction::mean && images > 0 ? 1.0 / static_cast<double>(images) : 1.0;

  const auto& features = pass.features;
  const int hw = features.h * features.w;
  model::Tensor4 grad_features;
  if (backprop) grad_features = model::Tensor4(features.n, features.c, features.h, features.w);
  const Eigen::MatrixXd& w = net.head.weight;

  double overlap = 0.0;
  double reg = 0.0;
  std::size_t k = 0;
  auto push_grad = [&](int i, std::size_t r, const Eigen::MatrixXd& raw,
                       const Eigen::MatrixXd& grad_map) {
    const Eigen::MatrixXd g =
        settings.normalize ? normalize_backward(raw, grad_map) : grad_map;
    Eigen::Map<const model::RowMatrix> f(features.sample(i), features.c, hw);
    Eigen::Map<model::RowMatrix> df(grad_features.sample(i), features.c, hw);
    Eigen::RowVectorXd flat(hw);
    for (int y = 0; y < features.h; ++y) {
      for (int x = 0; x < features.w; ++x) flat(y * features.w + x) = g(y, x);
    }
    const auto col = static_cast<Eigen::Index>(r);
    net.grad_weight.col(col).noalias() += f * flat.transpose();
    df.noalias() += w.col(col) * flat;
  };

  for_each_active(batch.targets, pairs, [&](int i, const bias::BiasedPair& p) {
    if (k >= anchor.size()) throw Error("CAM anchor list shorter than active pairs");
    const auto view = model::view_sample(features, i);
    const Eigen::MatrixXd raw_b = model::compute_cam(view, w, p.b, false);
    const Eigen::MatrixXd raw_c = model::compute_cam(view, w, p.c, false);
    const Eigen::MatrixXd nb =
        settings.normalize ? model::normalize_cam(raw_b).normalized : raw_b;
    const Eigen::MatrixXd nc =
        settings.normalize ? model::normalize_cam(raw_c).normalized : raw_c;
    const auto& pre = anchor[k++];
    overlap += (nb.array() * nc.array()).sum();
    reg += (pre.cam_b - nb).cwiseAbs().sum() + (pre.cam_c - nc).cwiseAbs().sum();
    if (backprop) {
      const Eigen::MatrixXd g_b =
          scale * (settings.lambda1 * nc + settings.lambda2 * (nb - pre.cam_b).unaryExpr(&sign));
      const Eigen::MatrixXd g_c =
          scale * (settings.lambda1 * nb + settings.lambda2 * (nc - pre.cam_c).unaryExpr(&sign));
      push_grad(i, p.b, raw_b, g_b);
      push_grad(i, p.c, raw_c, g_c);
    }
  });
  if (k != anchor.size()) throw Error("CAM anchor list longer than active pairs");

  StepTerms terms;
  terms.l_bce = lg.loss;
  terms.l_o = overlap * scale;
  terms.l_r = reg * scale;
  terms.total = settings.lambda1 * terms.l_o + settings.lambda2 * terms.l_r + lg.loss;
  if (backprop) {
    net.grad_weight.noalias() += pass.pooled.transpose() * lg.grad;
    if (net.head.use_bias) net.grad_bias += lg.grad.colwise().sum().transpose();
    const Eigen::MatrixXd grad_pooled = lg.grad * w.transpose();
    net.backward_features(pass, grad_pooled, &grad_features);
  }
  return terms;
}

StepTerms feature_split_objective(model::Network& net, const Batch& batch,
                                  const std::vector<std::uint8_t>& exclusive,
                                  const Eigen::VectorXd& xs_bar, bool backprop,
                                  const Eigen::MatrixXd* detached_weight,
                                  Eigen::VectorXd* batch_xs_mean) {
  if (!net.split) throw Error("feature-split objective needs a split head");
  const auto& split = *net.split;
  const auto pass = net.forward(batch.images);
  const Eigen::Index n = pass.pooled.rows();
  if (exclusive.size() != static_cast<std::size_t>(n)) {
    throw Error("exclusive mask size does not match batch");
  }
  if (xs_bar.size() != static_cast<Eigen::Index>(split.s_rows.size())) {
    throw Error("x̄_s dimension does not match the context subspace");
  }
  const Eigen::MatrixXd& w = net.head.weight;
  const Eigen::MatrixXd& w_const = detached_weight ? *detached_weight : w;

  // Context contribution on the substituted path is a per-class constant.
  Eigen::RowVectorXd context = Eigen::RowVectorXd::Zero(w.cols());
  for (std::size_t k = 0; k < split.s_rows.size(); ++k) {
    context += xs_bar(static_cast<Eigen::Index>(k)) *
               w_const.row(static_cast<Eigen::Index>(split.s_rows[k]));
  }
  // x with the context dims zeroed on exclusive rows.
  Eigen::MatrixXd x_masked = pass.pooled;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!exclusive[static_cast<std::size_t>(i)]) continue;
    for (auto d : split.s_rows) x_masked(i, static_cast<Eigen::Index>(d)) = 0.0;
  }
  Eigen::MatrixXd logits = x_masked * w;
  if (net.head.use_bias) logits.rowwise() += net.head.bias.transpose();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (exclusive[static_cast<std::size_t>(i)]) logits.row(i) += context;
  }

  const auto lg = weighted_bce(logits, batch.targets, batch.weights);
  if (backprop) {
    net.grad_weight.noalias() += x_masked.transpose() * lg.grad;
    if (net.head.use_bias) net.grad_bias += lg.grad.colwise().sum().transpose();
    Eigen::MatrixXd grad_pooled = lg.grad * w.transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!exclusive[static_cast<std::size_t>(i)]) continue;
      for (auto d : split.s_rows) grad_pooled(i, static_cast<Eigen::Index>(d)) = 0.0;
    }
    net.backward_features(pass, grad_pooled);
  }
  if (batch_xs_mean) {
    *batch_xs_mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(split.s_rows.size()));
    for (std::size_t k = 0; k < split.s_rows.size(); ++k) {
      (*batch_xs_mean)(static_cast<Eigen::Index>(k)) =
          pass.pooled.col(static_cast<Eigen::Index>(split.s_rows[k])).mean();
    }
  }
  return {lg.loss, lg.loss, 0.0, 0.0};
}

Eigen::MatrixXd alpha_weights(const data::LabeledDataset& train,
                              std::span<const bias::BiasedPair> pairs,
                              double alpha_min) {
  check_pairs(train, pairs);
  Eigen::MatrixXd w = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(train.size()),
                                            static_cast<Eigen::Index>(train.num_categories()));
  for (const auto& p : pairs) {
    auto col = w.col(static_cast<Eigen::Index>(p.b));
    col = col.cwiseMax(compute_alpha(train, p, alpha_min));
  }
  return w;
}

// ---- training loop ----

namespace {

struct MethodContext {
  Method method = Method::standard;
  data::LabeledDataset data;
  Eigen::MatrixXd row_weights;
  std::vector<bias::BiasedPair> pairs;
  std::optional<model::Network> frozen;
};

nlohmann::json pairs_meta(std::span<const bias::BiasedPair> pairs) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& p : pairs) out.push_back({{"b", p.b}, {"c", p.c}});
  return out;
}

std::vector<bias::BiasedPair> pairs_from_meta(const nlohmann::json& j) {
  std::vector<bias::BiasedPair> out;
  for (const auto& p : j) {
    bias::BiasedPair bp;
    bp.b = p.at("b").get<std::size_t>();
    bp.c = p.at("c").get<std::size_t>();
    out.push_back(bp);
  }
  return out;
}

Eigen::MatrixXd predict_logits(model::Network& net, const data::LabeledDataset& ds,
                               const data::PreprocessOptions& preprocess) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(ds.size()), net.num_classes());
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < ds.size(); start += kChunk) {
    const std::size_t end = std::min(ds.size(), start + kChunk);
    std::vector<std::size_t> rows(end - start);
    std::iota(rows.begin(), rows.end(), start);
    const auto batch = make_batch(ds, rows, preprocess, nullptr);
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        net.forward(batch.images).logits;
  }
  return out;
}

MethodContext build_context(const MethodSpec& spec, const data::LabeledDataset& train,
                            std::span<const bias::BiasedPair> pairs_in) {
  const auto& hp = spec.hp;
  MethodContext ctx;
  ctx.method = spec.method;
  check_pairs(train, pairs_in);
  auto pairs = bias::rebind_pairs(pairs_in, train);
  switch (spec.method) {
    case Method::standard:
      ctx.data = train;
      break;
    case Method::remove_labels:
      ctx.data = remove_cooccur_labels(train, pairs);
      break;
    case Method::remove_images:
      ctx.data = remove_cooccur_images(train, pairs);
      break;
    case Method::split_biased:
      ctx.data = split_biased_labels(train, pairs);
      break;
    case Method::weighted:
      ctx.data = train;
      ctx.row_weights = exclusive_b_weights(train, pairs, hp.weight_factor);
      break;
    case Method::negative_penalty:
      ctx.data = train;
      ctx.row_weights = negative_penalty_weights(train, pairs, hp.weight_factor);
      break;
    case Method::class_balancing:
      ctx.data = train;
      ctx.row_weights = class_balancing_weights(train, pairs, hp.beta);
      break;
    case Method::cam_based:
      if (pairs.empty()) throw ConfigError("cam_based training needs biased pairs");
      ctx.data = train;
      break;
    case Method::feature_split:
      ctx.data = train;
      if (hp.weighted_loss) ctx.row_weights = alpha_weights(train, pairs, hp.alpha_min);
      break;
  }
  if (ctx.data.size() == 0) throw DataError("training set is empty after transformation");
  ctx.pairs = bias::rebind_pairs(pairs, ctx.data);
  return ctx;
}

nlohmann::json base_meta(const MethodSpec& spec, const data::LabeledDataset& train,
                         std::span<const bias::BiasedPair> pairs) {
  return {{"method", to_string(spec.method)},
          {"category_names", train.category_names},
          {"base_categories", train.num_categories()},
          {"pairs", pairs_meta(pairs)},
          {"hyperparams", to_json(spec.hp)}};
}

TrainResult run(const MethodSpec& spec, MethodContext& ctx, model::ModelState state,
                const TrainOptions& opts) {
  const auto& hp = spec.hp;
  if (opts.selection != EpochSelection::last && !opts.val) {
    throw ConfigError("epoch selection '" + to_string(opts.selection) +
                      "' needs validation data");
  }
  model::SgdMomentum optimizer(hp.momentum, hp.weight_decay);
  optimizer.state() = state.optimizer_state;
  model::Network& net = state.network;
  if (spec.method == Method::feature_split && !net.split) {
    throw ConfigError("feature_split training state lacks a split head");
  }

  std::optional<data::LabeledDataset> val_loss_data;
  std::vector<bias::BiasedPair> val_pairs;
  if (opts.val) {
    val_loss_data = spec.method == Method::split_biased
                        ? split_biased_labels(*opts.val, ctx.pairs)
                        : *opts.val;
    val_pairs = bias::rebind_pairs(opts.val_pairs, *opts.val);
  }

  std::vector<EpochRecord> history;
  std::vector<double> epoch_seconds;
  std::optional<model::ModelState> best;
  int selected_epoch = 0;
  std::optional<double> best_score;
  const int final_epoch =
      opts.stop_after_epoch > 0 ? std::min(opts.stop_after_epoch, hp.epochs) : hp.epochs;
  const CamSettings cam{hp.lambda1, hp.lambda2, hp.cam_normalize, hp.cam_reduction};
  const std::size_t n = ctx.data.size();

  for (int epoch = state.epoch + 1; epoch <= final_epoch; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const double lr = hp.lr_at(epoch);
    Rng order_rng(Rng::derive(hp.seed, 2 * static_cast<std::uint64_t>(epoch)));
    Rng aug_rng(Rng::derive(hp.seed, 2 * static_cast<std::uint64_t>(epoch) + 1));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    order_rng.shuffle(order);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    auto accumulate = [&](const StepTerms& t, std::size_t count) {
      if (!std::isfinite(t.total)) {
        throw DivergenceError("non-finite loss in epoch " + std::to_string(epoch) +
                              " (method " + to_string(spec.method) + ")");
      }
      const double w = static_cast<double>(count) / static_cast<double>(n);
      rec.loss += t.total * w;
      rec.l_bce += t.l_bce * w;
      rec.l_o += t.l_o * w;
      rec.l_r += t.l_r * w;
    };
    auto step = [&] {
      auto params = net.parameters();
      optimizer.step(params, lr);
    };

    for (std::size_t start = 0; start < n; start += hp.batch_size) {
      const std::size_t end = std::min(n, start + hp.batch_size);
      std::vector<std::size_t> rows(order.begin() + start, order.begin() + end);
      const Batch batch = make_batch(ctx.data, rows, opts.preprocess,
                                     opts.augment ? &aug_rng : nullptr, ctx.row_weights);
      switch (ctx.method) {
        case Method::cam_based: {
          const auto part = partition_batch_cooccur(batch.targets, ctx.pairs);
          if (!part.cooccur.empty()) {
            const Batch co = batch.select(part.cooccur);
            const auto anchor = cam_anchor(*ctx.frozen, co, ctx.pairs, hp.cam_normalize);
            net.zero_grad();
            accumulate(cam_objective(net, co, ctx.pairs, anchor, cam, true), co.size());
            step();
          }
          if (!part.other.empty()) {
            const Batch other = batch.select(part.other);
            net.zero_grad();
            accumulate(bce_objective(net, other, true), other.size());
            step();
          }
          break;
        }
        case Method::feature_split: {
          const auto mask = exclusive_mask(batch.targets, ctx.pairs);
          Eigen::VectorXd xs_mean;
          net.zero_grad();
          accumulate(feature_split_objective(net, batch, mask, net.split->history.mean(),
                                             true, nullptr, &xs_mean),
                     batch.size());
          step();
          net.split->history.push(xs_mean);
          break;
        }
        default:
          net.zero_grad();
          accumulate(bce_objective(net, batch, true), batch.size());
          step();
          break;
      }
    }
    state.epoch = epoch;

    if (opts.val) {
      const Eigen::MatrixXd logits = predict_logits(net, *val_loss_data, opts.preprocess);
      Eigen::MatrixXd targets(logits.rows(), logits.cols());
      for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        for (Eigen::Index j = 0; j < logits.cols(); ++j) {
          targets(i, j) = val_loss_data->labels(static_cast<std::size_t>(i),
                                                static_cast<std::size_t>(j));
        }
      }
      rec.val_loss = weighted_bce(logits, targets).loss;
      bias::PredictionMatrix preds{logits.unaryExpr(&sigmoid)};
      if (spec.method == Method::split_biased) {
        preds.scores = recombine_split_scores(preds.scores, opts.val->num_categories(),
                                              ctx.pairs, hp.recombination);
      }
      const auto report = eval::evaluate(preds, *opts.val, val_pairs, opts.metric);
      rec.val_exclusive = report.exclusive_mean;
      rec.val_cooccur = report.cooccur_mean;
    }

    history.push_back(rec);
    epoch_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count());
    if (opts.on_epoch) opts.on_epoch(rec);

    std::optional<double> score;
    switch (opts.selection) {
      case EpochSelection::last: score = static_cast<double>(epoch); break;
      case EpochSelection::lowest_val_loss:
        if (rec.val_loss) score = -*rec.val_loss;
        break;
      case EpochSelection::best_exclusive: score = rec.val_exclusive; break;
      case EpochSelection::best_exclusive_plus_cooccur:
        if (rec.val_exclusive && rec.val_cooccur) score = *rec.val_exclusive + *rec.val_cooccur;
        break;
    }
    if (score && (!best_score || *score > *best_score)) {
      best_score = score;
      state.optimizer_state = optimizer.state();
      best = state;
      selected_epoch = epoch;
    }
  }
  state.optimizer_state = optimizer.state();
  if (!best) {
    best = state;
    selected_epoch = state.epoch;
  }
  return TrainResult{std::move(*best), std::move(state), std::move(history),
                     std::move(epoch_seconds), selected_epoch};
}

}  // namespace

TrainResult train_standard(const data::LabeledDataset& train, const MethodSpec& spec,
                           const TrainOptions& opts) {
  MethodSpec s = spec;
  s.method = Method::standard;
  MethodContext ctx = build_context(s, train, {});
  Rng init_rng(Rng::derive(s.hp.seed, 0xB0057ULL));
  model::Network net(model::make_backbone(opts.backbone, init_rng),
                     static_cast<int>(train.num_categories()), init_rng);
  model::ModelState state{std::move(net), {}, 0, s.hp.seed, base_meta(s, train, {})};
  return run(s, ctx, std::move(state), opts);
}

TrainResult train_stage2(const MethodSpec& spec, const model::ModelState& standard,
                         const data::LabeledDataset& train,
                         std::span<const bias::BiasedPair> pairs,
                         const TrainOptions& opts) {
  MethodContext ctx = build_context(spec, train, pairs);
  const auto m = static_cast<int>(train.num_categories());
  model::ModelState state{standard.network, {}, 0, spec.hp.seed,
                          base_meta(spec, train, ctx.pairs)};
  if (spec.method == Method::split_biased) {
    Rng init_rng(Rng::derive(spec.hp.seed, 0xB0057ULL));
    state.network = model::Network(
        model::make_backbone(standard.network.backbone().describe(), init_rng),
        static_cast<int>(ctx.data.num_categories()), init_rng);
  } else if (standard.network.num_classes() != m) {
    throw DataError("standard checkpoint has " +
                    std::to_string(standard.network.num_classes()) +
                    " outputs but the dataset has " + std::to_string(m) + " categories");
  }
  state.network.split.reset();
  if (spec.method == Method::cam_based) ctx.frozen = standard.network;
  if (spec.method == Method::feature_split) {
    const auto d = static_cast<std::size_t>(state.network.feature_dim());
    const std::size_t d_o = spec.hp.d_o == 0 ? d / 2 : spec.hp.d_o;
    if (d_o >= d) {
      throw ConfigError("feature_split d_o (" + std::to_string(d_o) +
                        ") must be smaller than the feature dimension " + std::to_string(d));
    }
    state.network.split = model::make_feature_split(
        static_cast<int>(d), spec.hp.split_mode, d_o, spec.hp.seed, spec.hp.history_length);
  }
  return run(spec, ctx, std::move(state), opts);
}

TrainResult resume_training(const MethodSpec& spec, const model::ModelState& checkpoint,
                            const data::LabeledDataset& train,
                            std::span<const bias::BiasedPair> pairs,
                            const TrainOptions& opts, const model::ModelState* standard) {
  MethodContext ctx = build_context(spec, train, pairs);
  if (spec.method == Method::cam_based) {
    if (!standard) throw ConfigError("resuming cam_based needs the stage-1 model");
    ctx.frozen = standard->network;
  }
  if (checkpoint.network.num_classes() != static_cast<int>(ctx.data.num_categories())) {
    throw DataError("checkpoint output count does not match the training labels");
  }
  return run(spec, ctx, checkpoint, opts);
}

bias::PredictionMatrix predict_categories(const model::ModelState& state,
                                          const data::LabeledDataset& dataset,
                                          const data::PreprocessOptions& preprocess) {
  model::Network net = state.network;
  const std::string method = state.meta.value("method", std::string("standard"));
  const auto base = state.meta.value("base_categories",
                                     static_cast<std::size_t>(net.num_classes()));
  if (base != dataset.num_categories()) {
    throw DataError("model was trained on " + std::to_string(base) +
                    " categories but the dataset has " +
                    std::to_string(dataset.num_categories()));
  }
  auto preds = eval::predict(net, dataset, preprocess);
  if (method == "split_biased") {
    const auto pairs = pairs_from_meta(state.meta.at("pairs"));
    Hyperparams hp;
    if (state.meta.contains("hyperparams")) update_from_json(hp, state.meta["hyperparams"]);
    preds.scores = recombine_split_scores(preds.scores, base, pairs, hp.recombination);
  }
  return preds;
}

}  // namespace ctxbias::train
