#include "ctxbias/cli/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "ctxbias/cli/figures.hpp"
#include "ctxbias/error.hpp"

namespace ctxbias::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ParseError(path.string() + ": invalid JSON");
  return doc;
}

std::string hex(const unsigned char* digest, unsigned len) {
  std::ostringstream os;
  for (unsigned i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return os.str();
}

std::string percent(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * *v);
  return buf;
}

std::optional<double> json_number(const json& j) {
  if (j.is_number()) return j.get<double>();
  return std::nullopt;
}

void write_config_copy(const ExperimentConfig& cfg) {
  write_text(RunPaths(cfg.output_dir).config(), cfg.document.dump(2) + "\n");
}

std::string data_key(const ExperimentConfig& cfg) {
  const json key = {{"data", cfg.document.value("data", json::object())}, {"seed", cfg.seed}};
  return sha256_bytes(key.dump());
}

json hash_tree(const fs::path& dir, const fs::path& skip) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path() != skip) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  json out = json::object();
  for (const auto& f : files) out[fs::relative(f, dir).generic_string()] = sha256_file(f);
  return out;
}

void save_split(const data::LabeledDataset& ds, const fs::path& dir) {
  if (!ds.images.empty()) {
    data::save_dataset_dir(ds, dir);
    return;
  }
  fs::create_directories(dir);
  data::write_matrix_file(ds, dir / "labels.csv");
  if (!ds.image_paths.empty()) {
    json paths = json::object();
    for (std::size_t i = 0; i < ds.size(); ++i) {
      paths[ds.ids[i]] = fs::absolute(ds.image_paths[i]).generic_string();
    }
    write_text(dir / "paths.json", paths.dump(1) + "\n");
  }
}

data::LabeledDataset load_merged(const std::vector<data::AnnotationSource>& sources) {
  auto merged = data::load_annotations(sources.front());
  for (std::size_t k = 1; k < sources.size(); ++k) {
    merged = data::merge_label_sources(merged, data::load_annotations(sources[k]));
  }
  return merged;
}

data::LabeledDataset require_split(const RunPaths& paths, data::Split split) {
  auto ds = load_split(paths, split);
  if (!ds) {
    throw DataError("no " + data::to_string(split) + " split under " + paths.data().string() +
                    "; run prepare-data first");
  }
  return std::move(*ds);
}

model::ModelState require_checkpoint(const fs::path& path, const std::string& hint) {
  if (!fs::exists(path)) throw DataError("missing checkpoint " + path.string() + "; " + hint);
  return model::load_checkpoint(path);
}

std::vector<bias::BiasedPair> load_pairs(const ExperimentConfig& cfg, const RunPaths& paths,
                                         const data::LabeledDataset& ds) {
  const fs::path file = cfg.pairs.source == "file" ? cfg.pairs.file : paths.pairs();
  if (!fs::exists(file)) {
    throw DataError("pair list " + file.string() +
                    " not found; run find-pairs first or set pairs.file");
  }
  return bias::read_pairs_json(file, ds);
}

std::size_t resolve_category(const std::vector<std::string>& names, const std::string& token) {
  for (std::size_t j = 0; j < names.size(); ++j) {
    if (names[j] == token) return j;
  }
  if (!token.empty() && std::all_of(token.begin(), token.end(), ::isdigit)) {
    const auto idx = std::stoul(token);
    if (idx < names.size()) return idx;
  }
  throw DataError("unknown category '" + token + "'");
}

train::TrainOptions base_options(const ExperimentConfig& cfg) {
  train::TrainOptions opts;
  opts.preprocess = cfg.preprocess;
  opts.augment = cfg.augment;
  opts.backbone = cfg.backbone;
  opts.metric = cfg.evaluation.metric;
  opts.selection = cfg.selection;
  return opts;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::vector<std::string> out;
  std::ifstream in(path);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

void write_history(const fs::path& path, const std::string& method, int keep_through,
                   const std::vector<train::EpochRecord>& records) {
  std::string text;
  for (const auto& line : read_lines(path)) {
    const json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded()) continue;
    if (rec.value("method", "") == method && rec.value("epoch", 0) > keep_through) continue;
    text += line + "\n";
  }
  for (const auto& r : records) {
    json j = train::to_json(r);
    j["method"] = method;
    text += j.dump() + "\n";
  }
  write_text(path, text);
}

void record_timing(const fs::path& path, const std::string& key,
                   const std::vector<double>& seconds) {
  json doc = fs::exists(path) ? read_json(path) : json::object();
  double total = 0.0;
  for (double s : seconds) total += s;
  doc[key] = {{"epoch_seconds", seconds}, {"total_seconds", total}};
  write_text(path, doc.dump(2) + "\n");
}

std::optional<std::vector<std::size_t>> non_biased_indices(const ExperimentConfig& cfg,
                                                           const data::LabeledDataset& ds) {
  if (cfg.evaluation.non_biased.empty()) return std::nullopt;
  std::vector<std::size_t> out;
  for (const auto& name : cfg.evaluation.non_biased) {
    const auto idx = ds.category_index(name);
    if (!idx) throw ConfigError("evaluation.non_biased names unknown category '" + name + "'");
    out.push_back(*idx);
  }
  return out;
}

json cosine_json(const eval::CosineReport& rep, const std::vector<std::string>& names) {
  json per = json::array();
  for (const auto& [cat, value] : rep.per_category) {
    per.push_back({{"category", cat},
                   {"name", cat < names.size() ? names[cat] : std::to_string(cat)},
                   {"similarity", value}});
  }
  return {{"mean", rep.mean ? json(*rep.mean) : json(nullptr)},
          {"per_category", per},
          {"excluded", rep.excluded}};
}

std::string summary_line(const std::string& label, const eval::EvalReport& rep) {
  return label + ": exclusive " + percent(rep.exclusive_mean) + ", co-occur " +
         percent(rep.cooccur_mean) + ", all " + percent(rep.all_mean) + "\n";
}

}  // namespace

std::string sha256_bytes(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  return hex(digest, len);
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  return hex(digest, len);
}

std::optional<data::LabeledDataset> load_split(const RunPaths& paths, data::Split split) {
  const auto dir = paths.split(split);
  if (!fs::exists(dir / "labels.csv")) return std::nullopt;
  data::LabeledDataset ds;
  if (fs::exists(dir / "images")) {
    ds = data::load_dataset_dir(dir, true);
  } else {
    ds = data::read_matrix_file(dir / "labels.csv");
    if (fs::exists(dir / "paths.json")) {
      const auto doc = read_json(dir / "paths.json");
      for (const auto& id : ds.ids) {
        if (!doc.contains(id)) throw DataError(dir.string() + "/paths.json lacks id " + id);
        ds.image_paths.emplace_back(doc[id].get<std::string>());
      }
    }
  }
  ds.split = split;
  return ds;
}

bool cmd_prepare_data(const ExperimentConfig& cfg, std::ostream& log) {
  const RunPaths paths(cfg.output_dir);
  fs::create_directories(paths.root);
  write_config_copy(cfg);
  const auto key = data_key(cfg);
  if (fs::exists(paths.manifest())) {
    const json manifest = read_json(paths.manifest());
    if (manifest.value("config_sha256", "") == key &&
        manifest.value("files", json::object()) == hash_tree(paths.data(), paths.manifest())) {
      log << "data up to date (" << paths.data().string() << ")\n";
      return false;
    }
  }
  fs::remove_all(paths.data());

  data::LabeledDataset full;
  std::optional<data::LabeledDataset> test;
  if (cfg.data.source == DataSource::synthetic) {
    full = data::generate_synthetic(cfg.data.synthetic);
    auto test_cfg = cfg.data.synthetic;
    test_cfg.seed = Rng::derive(cfg.data.synthetic.seed, 1);
    test_cfg.num_images = cfg.data.test_images;
    test_cfg.id_prefix = "test";
    if (cfg.data.test_cooccur_rate) {
      for (auto& p : test_cfg.pair_specs) p.cooccur_rate = *cfg.data.test_cooccur_rate;
    }
    if (test_cfg.num_images > 0) test = data::generate_synthetic(test_cfg);
  } else {
    full = load_merged(cfg.data.train_sources);
    if (!cfg.data.test_sources.empty()) test = load_merged(cfg.data.test_sources);
  }

  if (cfg.data.val_fraction > 0.0) {
    auto tv = data::partition_train_val(full, 1.0 - cfg.data.val_fraction, Rng::derive(cfg.seed, 2));
    save_split(tv.train, paths.split(data::Split::train));
    save_split(tv.val, paths.split(data::Split::val));
    log << "train " << tv.train.size() << " images, val " << tv.val.size() << " images\n";
  } else {
    full.split = data::Split::train;
    save_split(full, paths.split(data::Split::train));
    log << "train " << full.size() << " images\n";
  }
  if (test) {
    test->split = data::Split::test;
    save_split(*test, paths.split(data::Split::test));
    log << "test " << test->size() << " images\n";
  }
  const json manifest = {{"config_sha256", key},
                         {"files", hash_tree(paths.data(), paths.manifest())}};
  write_text(paths.manifest(), manifest.dump(2) + "\n");
  log << "wrote " << paths.manifest().string() << "\n";
  return true;
}

void cmd_find_pairs(const ExperimentConfig& cfg, std::ostream& log) {
  const RunPaths paths(cfg.output_dir);
  write_config_copy(cfg);
  auto state = require_checkpoint(paths.checkpoint("standard"),
                                  "train the standard model first");
  const auto wanted = data::split_from_string(cfg.pairs.split);
  auto ds = load_split(paths, wanted);
  if (!ds && wanted == data::Split::val) ds = load_split(paths, data::Split::train);
  if (!ds) throw DataError("no data split available for bias computation");

  const auto preds = train::predict_categories(state, *ds, cfg.preprocess);
  std::optional<std::vector<std::size_t>> candidates;
  if (cfg.pairs.candidates) {
    candidates.emplace();
    for (const auto& name : *cfg.pairs.candidates) {
      const auto idx = ds->category_index(name);
      if (!idx) throw ConfigError("pairs.candidates names unknown category '" + name + "'");
      candidates->push_back(*idx);
    }
  }
  const auto sel = bias::identify_pairs(preds, *ds, cfg.pairs.k, cfg.pairs.threshold, candidates);
  fs::create_directories(paths.reports());
  bias::write_pairs_json(sel.pairs, *ds, paths.pairs());
  if (sel.fewer_than_requested) {
    log << "warning: only " << sel.pairs.size() << " pairs satisfy the co-occurrence threshold\n";
  }
  for (const auto& p : sel.pairs) {
    log << ds->category_names[p.b] << " <- " << ds->category_names[p.c] << "  bias "
        << p.bias_value << "\n";
  }
  log << "wrote " << paths.pairs().string() << " (bias on " << data::to_string(ds->split)
      << " split)\n";
}

void cmd_train(const ExperimentConfig& cfg, const TrainRequest& request, std::ostream& log) {
  const RunPaths paths(cfg.output_dir);
  write_config_copy(cfg);
  const auto method = train::method_from_string(request.method);
  const std::string name = train::to_string(method);
  if ((request.resume || request.stop_after_epoch > 0) &&
      cfg.selection != train::EpochSelection::last) {
    throw ConfigError("stopping and resuming need training.selection = last");
  }
  const auto train_ds = require_split(paths, data::Split::train);
  const auto val_ds = load_split(paths, data::Split::val);
  const auto spec = cfg.method_spec(method);

  std::vector<bias::BiasedPair> pairs;
  const bool pairs_known =
      cfg.pairs.source == "file" ? fs::exists(cfg.pairs.file) : fs::exists(paths.pairs());
  if (method != train::Method::standard || pairs_known) pairs = load_pairs(cfg, paths, train_ds);

  auto opts = base_options(cfg);
  if (val_ds) {
    opts.val = &*val_ds;
    opts.val_pairs = pairs;
  }
  opts.stop_after_epoch = request.stop_after_epoch;
  std::vector<train::EpochRecord> records;
  opts.on_epoch = [&](const train::EpochRecord& r) {
    records.push_back(r);
    log << name << " epoch " << r.epoch << " lr " << r.lr << " loss " << r.loss;
    if (r.l_o != 0.0 || r.l_r != 0.0) log << " (bce " << r.l_bce << ", L_O " << r.l_o << ", L_R " << r.l_r << ")";
    if (r.val_loss) log << " val_loss " << *r.val_loss;
    log << "\n";
  };

  const fs::path stage1_path = request.stage1.value_or(paths.checkpoint("standard"));
  int keep_through = 0;
  std::optional<train::TrainResult> result;
  if (request.resume) {
    auto ckpt = require_checkpoint(*request.resume, "cannot resume");
    if (ckpt.meta.value("method", "") != name) {
      throw DataError("checkpoint " + request.resume->string() + " was written by method '" +
                      ckpt.meta.value("method", "") + "', not '" + name + "'");
    }
    keep_through = ckpt.epoch;
    std::optional<model::ModelState> stage1;
    if (method == train::Method::cam_based) {
      stage1 = require_checkpoint(stage1_path, "cam_based needs the stage-1 model");
    }
    result = train::resume_training(spec, ckpt, train_ds, pairs, opts,
                                    stage1 ? &*stage1 : nullptr);
  } else if (method == train::Method::standard) {
    result = train::train_standard(train_ds, spec, opts);
  } else if (method == train::Method::split_biased && !fs::exists(stage1_path)) {
    Rng rng(Rng::derive(cfg.seed, 3));
    model::ModelState blank{model::Network(model::make_backbone(cfg.backbone, rng),
                                           static_cast<int>(train_ds.num_categories()), rng),
                            {}};
    result = train::train_stage2(spec, blank, train_ds, pairs, opts);
  } else {
    const auto stage1 = require_checkpoint(stage1_path, "train the standard model first");
    result = train::train_stage2(spec, stage1, train_ds, pairs, opts);
  }

  fs::create_directories(paths.checkpoints());
  const auto& saved = request.stop_after_epoch > 0 ? result->last : result->state;
  model::save_checkpoint(saved, paths.checkpoint(name));
  write_history(paths.history(), name, keep_through, records);
  record_timing(paths.timing(), name, result->epoch_seconds);
  log << "wrote " << paths.checkpoint(name).string() << " (epoch " << saved.epoch << ")\n";
}

void cmd_evaluate(const ExperimentConfig& cfg, std::vector<std::string> methods,
                  std::ostream& log) {
  const RunPaths paths(cfg.output_dir);
  write_config_copy(cfg);
  const auto test = require_split(paths, data::Split::test);
  if (methods.empty()) {
    for (auto m : train::all_methods()) {
      if (fs::exists(paths.checkpoint(train::to_string(m)))) methods.push_back(train::to_string(m));
    }
    if (methods.empty()) throw DataError("no checkpoints under " + paths.checkpoints().string());
  }
  const auto pairs = load_pairs(cfg, paths, test);
  const auto non_biased = non_biased_indices(cfg, test);
  fs::create_directories(paths.reports());
  for (const auto& m : methods) {
    const auto name = train::to_string(train::method_from_string(m));
    const auto state = require_checkpoint(paths.checkpoint(name), "train '" + name + "' first");
    const auto preds = train::predict_categories(state, test, cfg.preprocess);
    const auto rep = eval::evaluate(preds, test, pairs, cfg.evaluation.metric, non_biased);
    eval::write_report_json(rep, paths.reports() / (name + ".json"));
    eval::write_report_csv(rep, paths.reports() / (name + ".csv"));
    const auto& split = state.network.split;
    if (!split || split->o_rows.size() == split->s_rows.size()) {
      const auto cos = eval::cosine_similarity_report(state.network.head, split, pairs, cfg.seed);
      write_text(paths.reports() / (name + ".cosine.json"),
                 cosine_json(cos, test.category_names).dump(2) + "\n");
    }
    for (const auto& w : rep.warnings) log << "warning: " << w << "\n";
    log << summary_line(name, rep);
  }
}

void cmd_ablate(const ExperimentConfig& cfg, std::ostream& log) {
  if (cfg.ablation.lambda2.empty() && cfg.ablation.xo_size.empty()) {
    throw ConfigError("ablation.lambda2 and ablation.xo_size are both empty");
  }
  const RunPaths paths(cfg.output_dir);
  write_config_copy(cfg);
  const auto train_ds = require_split(paths, data::Split::train);
  const auto test = require_split(paths, data::Split::test);
  const auto stage1 = require_checkpoint(paths.checkpoint("standard"),
                                         "train the standard model first");
  const auto pairs = load_pairs(cfg, paths, train_ds);
  const auto test_pairs = bias::rebind_pairs(pairs, test);

  struct Point {
    std::string sweep;
    std::string value;
    train::MethodSpec spec;
  };
  std::vector<Point> points;
  for (double v : cfg.ablation.lambda2) {
    auto spec = cfg.method_spec(train::Method::cam_based);
    spec.hp.lambda2 = v;
    points.push_back({"lambda2", json(v).dump(), spec});
  }
  for (auto d : cfg.ablation.xo_size) {
    auto spec = cfg.method_spec(train::Method::feature_split);
    spec.hp.d_o = d;
    points.push_back({"xo_size", std::to_string(d), spec});
  }

  json table = json::array();
  std::string md = "| Sweep | Value | Method | Exclusive | Co-occur | All |\n|---|---|---|---|---|---|\n";
  auto opts = base_options(cfg);
  opts.selection = train::EpochSelection::last;
  for (const auto& pt : points) {
    const auto method = train::to_string(pt.spec.method);
    const RunPaths run(paths.root / "ablation" / (pt.sweep + "_" + pt.value));
    fs::create_directories(run.checkpoints());
    std::vector<train::EpochRecord> records;
    opts.on_epoch = [&](const train::EpochRecord& r) { records.push_back(r); };
    const auto res = train::train_stage2(pt.spec, stage1, train_ds, pairs, opts);
    model::save_checkpoint(res.state, run.checkpoint(method));
    write_history(run.history(), method, 0, records);
    record_timing(run.timing(), method, res.epoch_seconds);
    const auto preds = train::predict_categories(res.state, test, cfg.preprocess);
    const auto rep = eval::evaluate(preds, test, test_pairs, cfg.evaluation.metric);
    eval::write_report_json(rep, run.reports() / (method + ".json"));
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    table.push_back({{"sweep", pt.sweep},
                     {"value", json::parse(pt.value)},
                     {"method", method},
                     {"exclusive", opt(rep.exclusive_mean)},
                     {"cooccur", opt(rep.cooccur_mean)},
                     {"all", opt(rep.all_mean)}});
    md += "| " + pt.sweep + " | " + pt.value + " | " + method + " | " +
          percent(rep.exclusive_mean) + " | " + percent(rep.cooccur_mean) + " | " +
          percent(rep.all_mean) + " |\n";
    log << summary_line(pt.sweep + "=" + pt.value, rep);
  }
  write_text(paths.reports() / "ablation.json", table.dump(2) + "\n");
  write_text(paths.reports() / "ablation.md", md);
  log << "wrote " << (paths.reports() / "ablation.md").string() << "\n";
}

void cmd_cam_export(const ExperimentConfig& cfg, const CamRequest& request, std::ostream& log) {
  const RunPaths paths(cfg.output_dir);
  const auto name = train::to_string(train::method_from_string(request.method));
  auto state = require_checkpoint(paths.checkpoint(name), "train '" + name + "' first");
  if (request.ids.empty()) throw ConfigError("cam-export needs at least one image id");
  if (request.categories.empty()) throw ConfigError("cam-export needs at least one category");

  std::vector<data::LabeledDataset> splits;
  for (auto s : {data::Split::test, data::Split::val, data::Split::train}) {
    if (auto ds = load_split(paths, s)) splits.push_back(std::move(*ds));
  }
  if (splits.empty()) throw DataError("no prepared data under " + paths.data().string());

  std::vector<std::string> names = state.meta.value("category_names", splits.front().category_names);
  std::vector<std::size_t> cats;
  for (const auto& token : request.categories) cats.push_back(resolve_category(names, token));

  auto& net = state.network;
  const auto out_dir = paths.figures() / "cam" / name;
  fs::create_directories(out_dir);
  for (const auto& id : request.ids) {
    const data::LabeledDataset* owner = nullptr;
    std::size_t row = 0;
    for (const auto& ds : splits) {
      if (auto r = ds.row_of(id)) {
        owner = &ds;
        row = *r;
        break;
      }
    }
    if (!owner) throw DataError("unknown image id '" + id + "'");
    const auto input = data::preprocess_eval(owner->load_image(row), cfg.preprocess);
    const std::vector<data::Image> one{input};
    const auto pass = net.forward(train::pack_images(one));
    const auto view = model::view_sample(pass.features, 0);
    for (auto r : cats) {
      const auto stem = id + "_" + names[r];
      auto emit = [&](const Eigen::MatrixXd& cam, const std::string& suffix) {
        const auto path = out_dir / (stem + suffix + ".png");
        data::write_png(cam_overlay(input, cam), path);
        log << "wrote " << path.string() << "\n";
      };
      emit(model::compute_cam(view, net.head.weight, r, true), "");
      if (net.split) {
        emit(model::compute_cam(view, net.head.weight, r, true,
                                std::span<const std::size_t>(net.split->o_rows)), "_wo");
        emit(model::compute_cam(view, net.head.weight, r, true,
                                std::span<const std::size_t>(net.split->s_rows)), "_ws");
      }
    }
  }
}

void cmd_report(const std::vector<fs::path>& runs, const fs::path& out, std::ostream& log) {
  if (runs.empty()) throw ConfigError("report needs at least one run directory");
  struct Row {
    std::string label;
    json report;
  };
  std::vector<Row> rows;
  for (const auto& run : runs) {
    const RunPaths rp(run);
    for (auto m : train::all_methods()) {
      const auto file = rp.reports() / (train::to_string(m) + ".json");
      if (!fs::exists(file)) continue;
      const auto label = runs.size() > 1
                             ? run.filename().string() + "/" + train::to_string(m)
                             : train::to_string(m);
      rows.push_back({label, read_json(file)});
    }
  }
  if (rows.empty()) throw DataError("no evaluation reports found; run evaluate first");

  std::vector<std::string> groups;
  for (const auto& p : rows.front().report.at("pairs")) {
    groups.push_back(p.at("b_name").get<std::string>() + " (" +
                     p.at("c_name").get<std::string>() + ")");
  }
  groups.push_back("mean");
  const std::string metric = rows.front().report.value("metric", "map");
  const std::string metric_label = metric == "map" ? "mAP" : "top-3 recall";

  for (const char* dist : {"exclusive", "cooccur"}) {
    std::vector<BarSeries> series;
    for (const auto& row : rows) {
      BarSeries s{row.label, {}};
      for (const auto& p : row.report.at("pairs")) s.values.push_back(json_number(p.at(dist)));
      s.values.resize(groups.size() - 1);
      s.values.push_back(json_number(row.report.at("aggregates").at(dist)));
      series.push_back(std::move(s));
    }
    const std::string title =
        std::string(dist == std::string("exclusive") ? "Exclusive" : "Co-occur") + " " + metric_label;
    write_text(out / "figures" / (std::string(dist) + ".svg"), bar_chart_svg(title, groups, series));
  }

  std::string md = "| Method | Exclusive | Co-occur | All | Non-biased |\n|---|---|---|---|---|\n";
  for (const auto& row : rows) {
    const auto& agg = row.report.at("aggregates");
    md += "| " + row.label + " | " + percent(json_number(agg.at("exclusive"))) + " | " +
          percent(json_number(agg.at("cooccur"))) + " | " + percent(json_number(agg.at("all"))) +
          " | " + percent(json_number(agg.at("non_biased"))) + " |\n";
  }
  write_text(out / "reports" / "summary.md", "Metric: " + metric_label + "\n\n" + md);
  log << md;
}

}  // namespace ctxbias::cli
