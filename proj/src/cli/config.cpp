#include "ctxbias/cli/config.hpp"

#include <cstdlib>
#include <fstream>

#include "ctxbias/error.hpp"

namespace ctxbias::cli {

namespace {

using nlohmann::json;

template <typename T>
T get(const json& node, const char* key, const T& fallback, const std::string& where) {
  if (!node.contains(key)) return fallback;
  try {
    return node.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + where + key + "' has the wrong type");
  }
}

const json& section(const json& doc, const char* key) {
  static const json empty = json::object();
  if (!doc.contains(key)) return empty;
  if (!doc[key].is_object()) {
    throw ConfigError(std::string("config key '") + key + "' must be an object");
  }
  return doc[key];
}

std::vector<data::AnnotationSource> parse_sources(const json& list, const std::string& where) {
  if (!list.is_array()) throw ConfigError("config key '" + where + "' must be a list");
  std::vector<data::AnnotationSource> out;
  for (const auto& item : list) {
    data::AnnotationSource src;
    const auto format = get<std::string>(item, "format", "matrix", where + ".");
    if (format == "matrix") {
      src.format = data::AnnotationFormat::matrix;
    } else if (format == "coco") {
      src.format = data::AnnotationFormat::coco_json;
    } else {
      throw ConfigError("unknown annotation format '" + format + "' in " + where);
    }
    src.path = get<std::string>(item, "path", "", where + ".");
    if (src.path.empty()) throw ConfigError("annotation source in " + where + " needs a path");
    src.image_root = get<std::string>(item, "image_root", "", where + ".");
    out.push_back(std::move(src));
  }
  if (out.empty()) throw ConfigError("config key '" + where + "' lists no sources");
  return out;
}

DataConfig parse_data(const json& node, std::uint64_t seed) {
  DataConfig out;
  const auto source = get<std::string>(node, "source", "synthetic", "data.");
  out.val_fraction = get(node, "val_fraction", out.val_fraction, "data.");
  if (out.val_fraction < 0.0 || out.val_fraction >= 1.0) {
    throw ConfigError("data.val_fraction must be in [0, 1)");
  }
  if (source == "synthetic") {
    out.source = DataSource::synthetic;
    const auto& syn = section(node, "synthetic");
    auto& cfg = out.synthetic;
    cfg.seed = get(syn, "seed", seed, "data.synthetic.");
    cfg.num_images = get(syn, "num_images", cfg.num_images, "data.synthetic.");
    cfg.image_size = get(syn, "image_size", cfg.image_size, "data.synthetic.");
    cfg.num_categories = get(syn, "num_categories", cfg.num_categories, "data.synthetic.");
    cfg.presence_rate = get(syn, "presence_rate", cfg.presence_rate, "data.synthetic.");
    cfg.context_rate = get(syn, "context_rate", cfg.context_rate, "data.synthetic.");
    cfg.noise_std = get(syn, "noise_std", cfg.noise_std, "data.synthetic.");
    cfg.size_scale = get(syn, "size_scale", cfg.size_scale, "data.synthetic.");
    out.test_images = get(syn, "test_images", out.test_images, "data.synthetic.");
    if (syn.contains("test_cooccur_rate")) {
      out.test_cooccur_rate = get(syn, "test_cooccur_rate", 0.0, "data.synthetic.");
    }
    if (syn.contains("pairs")) {
      for (const auto& p : syn["pairs"]) {
        data::PairSpec spec;
        spec.b = get<std::size_t>(p, "b", 0, "data.synthetic.pairs.");
        spec.c = get<std::size_t>(p, "c", 0, "data.synthetic.pairs.");
        spec.cooccur_rate = get(p, "rate", 0.0, "data.synthetic.pairs.");
        cfg.pair_specs.push_back(spec);
      }
    }
  } else if (source == "annotations") {
    out.source = DataSource::annotations;
    if (!node.contains("train")) throw ConfigError("data.train is required for annotations");
    out.train_sources = parse_sources(node["train"], "data.train");
    if (node.contains("test")) out.test_sources = parse_sources(node["test"], "data.test");
  } else {
    throw ConfigError("data.source must be 'synthetic' or 'annotations', got '" + source + "'");
  }
  return out;
}

}  // namespace

train::MethodSpec ExperimentConfig::method_spec(train::Method m) const {
  auto spec = train::MethodSpec::defaults(m);
  spec.hp.seed = seed;
  const auto& training = section(document, "training");
  if (training.contains("common")) train::update_from_json(spec.hp, training["common"]);
  const auto name = train::to_string(m);
  if (training.contains(name)) train::update_from_json(spec.hp, training[name]);
  return spec;
}

void apply_override(nlohmann::json& document, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' must look like key.path=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &document;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) {
      throw ConfigError("override key '" + key + "' descends into a non-object");
    }
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

ExperimentConfig parse_config(const nlohmann::json& document) {
  if (!document.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig cfg;
  cfg.document = document;
  cfg.seed = get<std::uint64_t>(document, "seed", 0, "");

  std::filesystem::path out = get<std::string>(document, "output_dir", "", "");
  if (out.empty()) throw ConfigError("config key 'output_dir' is required");
  if (out.is_relative()) {
    if (const char* root = std::getenv(kOutputRootEnv); root && *root) out = root / out;
  }
  cfg.output_dir = out;

  cfg.data = parse_data(section(document, "data"), cfg.seed);

  const auto& pre = section(document, "preprocess");
  const int default_size =
      cfg.data.source == DataSource::synthetic ? cfg.data.synthetic.image_size : 224;
  cfg.preprocess.crop_size = get(pre, "crop_size", default_size, "preprocess.");
  cfg.preprocess.resize_shorter =
      get(pre, "resize_shorter",
          cfg.data.source == DataSource::synthetic ? default_size : 256, "preprocess.");
  cfg.preprocess.min_scale = get(pre, "min_scale", cfg.preprocess.min_scale, "preprocess.");
  cfg.preprocess.random_crop = get(pre, "random_crop", cfg.preprocess.random_crop, "preprocess.");
  cfg.preprocess.flip = get(pre, "flip", cfg.preprocess.flip, "preprocess.");
  cfg.augment = get(pre, "augment", cfg.augment, "preprocess.");
  if (cfg.preprocess.crop_size <= 0 || cfg.preprocess.resize_shorter < cfg.preprocess.crop_size) {
    throw ConfigError("preprocess.resize_shorter must be at least preprocess.crop_size > 0");
  }

  cfg.backbone = document.value("backbone", json{{"kind", "small_cnn"}});
  if (!cfg.backbone.is_object() || !cfg.backbone.contains("kind")) {
    throw ConfigError("config key 'backbone' must be an object with a 'kind'");
  }

  const auto& training = section(document, "training");
  cfg.method = get<std::string>(training, "method", cfg.method, "training.");
  train::method_from_string(cfg.method);
  cfg.selection = train::selection_from_string(
      get<std::string>(training, "selection", "last", "training."));
  for (auto m : train::all_methods()) cfg.method_spec(m);

  const auto& pairs = section(document, "pairs");
  cfg.pairs.source = get<std::string>(pairs, "source", cfg.pairs.source, "pairs.");
  if (cfg.pairs.source != "computed" && cfg.pairs.source != "file") {
    throw ConfigError("pairs.source must be 'computed' or 'file'");
  }
  cfg.pairs.file = get<std::string>(pairs, "file", "", "pairs.");
  if (cfg.pairs.source == "file" && cfg.pairs.file.empty()) {
    throw ConfigError("pairs.file is required when pairs.source is 'file'");
  }
  cfg.pairs.k = get(pairs, "k", cfg.pairs.k, "pairs.");
  cfg.pairs.threshold = get(pairs, "threshold", cfg.pairs.threshold, "pairs.");
  cfg.pairs.split = get<std::string>(pairs, "split", cfg.pairs.split, "pairs.");
  data::split_from_string(cfg.pairs.split);
  if (pairs.contains("candidates")) {
    cfg.pairs.candidates = get<std::vector<std::string>>(pairs, "candidates", {}, "pairs.");
  }

  const auto& ev = section(document, "evaluation");
  cfg.evaluation.metric = eval::metric_from_string(get<std::string>(ev, "metric", "map", "evaluation."));
  cfg.evaluation.non_biased = get<std::vector<std::string>>(ev, "non_biased", {}, "evaluation.");

  const auto& ab = section(document, "ablation");
  cfg.ablation.lambda2 = get<std::vector<double>>(ab, "lambda2", {}, "ablation.");
  cfg.ablation.xo_size = get<std::vector<std::size_t>>(ab, "xo_size", {}, "ablation.");
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json doc = nlohmann::json::parse(in, nullptr, false, true);
  if (doc.is_discarded()) throw ConfigError(path.string() + ": config is not valid JSON");
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_config(doc);
}

}  // namespace ctxbias::cli
