#include "ctxbias/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "ctxbias/error.hpp"

namespace ctxbias::model {

Network::Network(std::unique_ptr<Backbone> backbone, int num_classes, Rng& rng)
    : backbone_(std::move(backbone)) {
  reset_head(num_classes, rng);
}

Network::Network(const Network& other)
    : head(other.head),
      grad_weight(other.grad_weight),
      grad_bias(other.grad_bias),
      split(other.split),
      backbone_(other.backbone_->clone()) {}

Network& Network::operator=(const Network& other) {
  if (this != &other) {
    head = other.head;
    grad_weight = other.grad_weight;
    grad_bias = other.grad_bias;
    split = other.split;
    backbone_ = other.backbone_->clone();
  }
  return *this;
}

void Network::reset_head(int num_classes, Rng& rng) {
  const int d = backbone_->feature_dim();
  head = ClassifierHead(d, num_classes);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  for (Eigen::Index k = 0; k < head.weight.size(); ++k) {
    head.weight.data()[k] = rng.uniform(-bound, bound);
  }
  for (Eigen::Index k = 0; k < head.bias.size(); ++k) {
    head.bias(k) = rng.uniform(-bound, bound);
  }
  grad_weight = Eigen::MatrixXd::Zero(d, num_classes);
  grad_bias = Eigen::VectorXd::Zero(num_classes);
  split.reset();
}

ForwardPass Network::forward(const Tensor4& images) {
  ForwardPass pass;
  pass.features = backbone_->forward(images);
  pass.pooled = global_average_pool(pass.features);
  pass.logits = forward_scores(pass.pooled, head);
  return pass;
}

void Network::backward_features(const ForwardPass& pass,
                                const Eigen::MatrixXd& grad_pooled,
                                const Tensor4* grad_features) {
  const Tensor4& f = pass.features;
  Tensor4 g = grad_features ? *grad_features : Tensor4(f.n, f.c, f.h, f.w);
  const int hw = f.h * f.w;
  const double inv = 1.0 / hw;
  for (int i = 0; i < f.n; ++i) {
    double* s = g.sample(i);
    for (int d = 0; d < f.c; ++d) {
      const double v = grad_pooled(i, d) * inv;
      for (int k = 0; k < hw; ++k) s[d * hw + k] += v;
    }
  }
  backbone_->backward(g);
}

void Network::zero_grad() {
  for (auto& p : parameters()) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

std::vector<ParamView> Network::parameters() {
  auto params = backbone_->parameters();
  params.push_back({"head.weight",
                    {head.weight.data(), static_cast<std::size_t>(head.weight.size())},
                    {grad_weight.data(), static_cast<std::size_t>(grad_weight.size())}});
  if (head.use_bias) {
    params.push_back({"head.bias",
                      {head.bias.data(), static_cast<std::size_t>(head.bias.size())},
                      {grad_bias.data(), static_cast<std::size_t>(grad_bias.size())}});
  }
  return params;
}

void SgdMomentum::step(std::vector<ParamView>& params, double lr) {
  if (velocity_.size() != params.size()) {
    velocity_.assign(params.size(), {});
    for (std::size_t k = 0; k < params.size(); ++k) {
      velocity_[k].assign(params[k].value.size(), 0.0);
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& v = velocity_[k];
    auto value = params[k].value;
    auto grad = params[k].grad;
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = grad[j] + weight_decay_ * value[j];
      v[j] = momentum_ * v[j] + g;
      value[j] -= lr * v[j];
    }
  }
}

namespace {

constexpr char kMagic[8] = {'C', 'T', 'X', 'B', 'C', 'K', 'P', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs assume a little-endian host");

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::istream& in, const std::string& path) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw ParseError(path + ": truncated checkpoint");
  }
  return v;
}

void write_doubles(std::ostream& out, std::span<const double> values) {
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
}

void read_doubles(std::istream& in, std::span<double> values,
                  const std::string& path) {
  if (!in.read(reinterpret_cast<char*>(values.data()),
               static_cast<std::streamsize>(values.size() * sizeof(double)))) {
    throw ParseError(path + ": truncated checkpoint");
  }
}

}  // namespace

void save_checkpoint(const ModelState& state, const std::filesystem::path& path) {
  Network net = state.network;
  auto params = net.parameters();

  nlohmann::json header;
  header["format"] = "ctxbias-checkpoint";
  header["version"] = 1;
  header["backbone"] = net.backbone().describe();
  header["num_classes"] = net.num_classes();
  header["use_bias"] = net.head.use_bias;
  header["epoch"] = state.epoch;
  header["seed"] = state.seed;
  header["meta"] = state.meta;
  nlohmann::json plist = nlohmann::json::array();
  for (const auto& p : params) plist.push_back({{"name", p.name}, {"size", p.value.size()}});
  header["params"] = plist;
  header["has_optimizer_state"] = !state.optimizer_state.empty();
  if (!state.optimizer_state.empty() && state.optimizer_state.size() != params.size()) {
    throw Error("optimizer state does not match parameter list");
  }
  if (net.split) {
    header["split"] = {{"o_rows", net.split->o_rows},
                       {"s_rows", net.split->s_rows},
                       {"capacity", net.split->history.capacity()},
                       {"history", net.split->history.size()}};
  } else {
    header["split"] = nullptr;
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  const std::string text = header.dump();
  out.write(kMagic, sizeof kMagic);
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params) write_doubles(out, p.value);
  for (const auto& v : state.optimizer_state) write_doubles(out, v);
  if (net.split) {
    for (const auto& e : net.split->history.entries()) {
      write_doubles(out, {e.data(), static_cast<std::size_t>(e.size())});
    }
  }
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  const std::string where = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + where);
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) ||
      std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw ParseError(where + ": not a checkpoint file");
  }
  const auto len = read_u64(in, where);
  if (len > (1u << 30)) throw ParseError(where + ": corrupt header length");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) {
    throw ParseError(where + ": truncated checkpoint");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(where + ": corrupt header: " + e.what());
  }

  try {
    Rng rng(0);
    Network net(make_backbone(header.at("backbone"), rng),
                header.at("num_classes").get<int>(), rng);
    net.head.use_bias = header.at("use_bias").get<bool>();
    auto params = net.parameters();
    const auto& plist = header.at("params");
    if (plist.size() != params.size()) {
      throw ParseError(where + ": parameter list does not match architecture");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (plist[k].at("name").get<std::string>() != params[k].name ||
          plist[k].at("size").get<std::size_t>() != params[k].value.size()) {
        throw ParseError(where + ": parameter " + params[k].name +
                         " does not match architecture");
      }
      read_doubles(in, params[k].value, where);
    }
    ModelState state{std::move(net), {}, header.at("epoch").get<int>(),
                     header.at("seed").get<std::uint64_t>(), header.at("meta")};
    if (header.at("has_optimizer_state").get<bool>()) {
      state.optimizer_state.resize(params.size());
      for (std::size_t k = 0; k < params.size(); ++k) {
        state.optimizer_state[k].resize(params[k].value.size());
        read_doubles(in, state.optimizer_state[k], where);
      }
    }
    const auto& split = header.at("split");
    if (!split.is_null()) {
      FeatureSplit fs;
      fs.o_rows = split.at("o_rows").get<std::vector<std::size_t>>();
      fs.s_rows = split.at("s_rows").get<std::vector<std::size_t>>();
      if (fs.o_rows.size() + fs.s_rows.size() !=
          static_cast<std::size_t>(state.network.feature_dim())) {
        throw ParseError(where + ": split does not cover the feature dimension");
      }
      fs.history = XsHistory(static_cast<int>(fs.s_rows.size()),
                             split.at("capacity").get<std::size_t>());
      const auto count = split.at("history").get<std::size_t>();
      for (std::size_t k = 0; k < count; ++k) {
        Eigen::VectorXd v(fs.s_rows.size());
        read_doubles(in, {v.data(), static_cast<std::size_t>(v.size())}, where);
        fs.history.push(v);
      }
      state.network.split = std::move(fs);
    }
    if (in.peek() != std::char_traits<char>::eof()) {
      throw ParseError(where + ": trailing bytes after checkpoint payload");
    }
    return state;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + ": corrupt header: " + e.what());
  }
}

void restore_weights(Network& target, const Network& source) {
  Network src = source;
  auto to = target.parameters();
  auto from = src.parameters();
  if (to.size() != from.size()) {
    throw DataError("checkpoint architecture does not match target network");
  }
  for (std::size_t k = 0; k < to.size(); ++k) {
    if (to[k].name != from[k].name || to[k].value.size() != from[k].value.size()) {
      throw DataError("checkpoint parameter " + from[k].name + " has size " +
                      std::to_string(from[k].value.size()) + ", target expects " +
                      std::to_string(to[k].value.size()));
    }
  }
  for (std::size_t k = 0; k < to.size(); ++k) {
    std::copy(from[k].value.begin(), from[k].value.end(), to[k].value.begin());
  }
  target.split = src.split;
}

}  // namespace ctxbias::model
