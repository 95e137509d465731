#include <doctest.h>

#include <nlohmann/json.hpp>

#include "ctxbias/dataset.hpp"
#include "ctxbias/error.hpp"
#include "ctxbias/image.hpp"
#include "ctxbias/synthetic.hpp"
#include "test_support.hpp"

using namespace ctxbias;
using namespace ctxbias::data;
using testing::TempDir;
using testing::write_file;

namespace {

nlohmann::json coco_doc(const std::vector<std::pair<int, std::string>>& cats,
                        const std::vector<int>& image_ids,
                        const std::vector<std::pair<int, int>>& anns) {
  nlohmann::json doc;
  doc["categories"] = nlohmann::json::array();
  for (const auto& [id, name] : cats) doc["categories"].push_back({{"id", id}, {"name", name}});
  doc["images"] = nlohmann::json::array();
  for (int id : image_ids) doc["images"].push_back({{"id", id}, {"file_name", std::to_string(id) + ".png"}});
  doc["annotations"] = nlohmann::json::array();
  for (const auto& [img, cat] : anns) {
    doc["annotations"].push_back({{"image_id", img}, {"category_id", cat}, {"bbox", {1, 2, 3, 4}}});
  }
  return doc;
}

Image gradient_image(int h, int w) {
  Image img(h, w, 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      img.at(y, x, 0) = static_cast<float>(y) / h;
      img.at(y, x, 1) = static_cast<float>(x) / w;
      img.at(y, x, 2) = static_cast<float>((x + y) % 7) / 7.0f;
    }
  }
  return img;
}

}  // namespace

TEST_CASE("matrix file with three images and two categories") {
  TempDir dir("matrix");
  write_file(dir / "labels.csv", "id,cup,table\nb,0,1\na,1,1\nc,0,0\n");
  const auto ds = load_annotations({AnnotationFormat::matrix, dir / "labels.csv", {}});
  CHECK(ds.size() == 3);
  CHECK(ds.num_categories() == 2);
  CHECK(ds.ids == std::vector<std::string>{"a", "b", "c"});
  CHECK(ds.labels(0, 0) == 1);
  CHECK(ds.labels(1, 0) == 0);
  CHECK(ds.labels(1, 1) == 1);
}

TEST_CASE("matrix file errors name file, line and record") {
  TempDir dir("matrix_bad");
  write_file(dir / "bad.csv", "id,a,b\nx,1,0\ny,1,7\n");
  try {
    read_matrix_file(dir / "bad.csv");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("bad.csv:3") != std::string::npos);
    CHECK(msg.find("'y'") != std::string::npos);
  }
  write_file(dir / "dup.csv", "id,a,b\nx,1,0\nx,0,0\n");
  CHECK_THROWS(read_matrix_file(dir / "dup.csv"));
  write_file(dir / "short.csv", "id,a,b\nx,1\n");
  CHECK_THROWS_AS(read_matrix_file(dir / "short.csv"), ParseError);
  CHECK_THROWS_AS(read_matrix_file(dir / "missing.csv"), ParseError);
}

TEST_CASE("matrix file round trip") {
  TempDir dir("matrix_rt");
  auto ds = testing::make_dataset({{1, 0, 1}, {0, 0, 0}, {1, 1, 1}});
  write_matrix_file(ds, dir / "m.csv");
  const auto back = read_matrix_file(dir / "m.csv");
  CHECK(back.ids == ds.ids);
  CHECK(back.labels == ds.labels);
  CHECK(back.category_names == ds.category_names);
}

TEST_CASE("coco json image with person and skateboard") {
  TempDir dir("coco");
  const auto doc = coco_doc({{1, "person"}, {41, "skateboard"}, {3, "car"}}, {7, 8},
                            {{7, 1}, {7, 41}, {7, 41}, {8, 3}});
  write_file(dir / "inst.json", doc.dump());
  const auto ds = load_annotations({AnnotationFormat::coco_json, dir / "inst.json", {}});
  REQUIRE(ds.size() == 2);
  const auto row = *ds.row_of("7");
  CHECK(ds.labels(row, *ds.category_index("person")) == 1);
  CHECK(ds.labels(row, *ds.category_index("skateboard")) == 1);
  CHECK(ds.labels(row, *ds.category_index("car")) == 0);
  REQUIRE(ds.boxes.size() == 2);
  CHECK(ds.boxes[row].size() == 3);
  CHECK(ds.boxes[row][0] == ObjectBox{*ds.category_index("person"), 2, 1, 6, 4});
}

TEST_CASE("coco json errors") {
  TempDir dir("coco_bad");
  write_file(dir / "trunc.json", "{\"images\": [");
  CHECK_THROWS_AS(read_coco_json(dir / "trunc.json"), ParseError);
  write_file(dir / "nocat.json", coco_doc({{1, "a"}}, {1}, {{1, 9}}).dump());
  CHECK_THROWS_AS(read_coco_json(dir / "nocat.json"), DataError);
  write_file(dir / "noimg.json", coco_doc({{1, "a"}}, {1}, {{2, 1}}).dump());
  CHECK_THROWS_AS(read_coco_json(dir / "noimg.json"), ParseError);
}

TEST_CASE("thing and stuff files merge to the union vocabulary") {
  TempDir dir("merge171");
  std::vector<std::pair<int, std::string>> things, stuff;
  for (int k = 0; k < 80; ++k) things.emplace_back(k + 1, "thing" + std::to_string(k));
  for (int k = 0; k < 91; ++k) stuff.emplace_back(92 + k, "stuff" + std::to_string(k));
  write_file(dir / "things.json", coco_doc(things, {1, 2, 3}, {{1, 1}, {2, 80}}).dump());
  write_file(dir / "stuff.json", coco_doc(stuff, {1, 2, 3}, {{1, 92}, {3, 182}}).dump());
  const auto merged = merge_label_sources(read_coco_json(dir / "things.json"),
                                          read_coco_json(dir / "stuff.json"));
  CHECK(merged.num_categories() == 171);
  const auto r1 = *merged.row_of("1");
  CHECK(merged.labels(r1, *merged.category_index("thing0")) == 1);
  CHECK(merged.labels(r1, *merged.category_index("stuff0")) == 1);
  std::size_t ones = 0;
  for (std::size_t i = 0; i < merged.size(); ++i) {
    for (std::size_t j = 0; j < merged.num_categories(); ++j) ones += merged.labels(i, j);
  }
  CHECK(ones == 4);
}

TEST_CASE("merge semantics") {
  auto a = testing::make_dataset({{1, 0}, {0, 0}});
  a.category_names = {"cup", "fork"};
  auto b = testing::make_dataset({{1}, {0}});
  b.category_names = {"dining table"};
  const auto m = merge_label_sources(a, b);
  CHECK(m.category_names == std::vector<std::string>{"cup", "fork", "dining table"});
  CHECK(m.labels(0, 0) == 1);
  CHECK(m.labels(0, 2) == 1);

  SUBCASE("empty vocabulary is the identity") {
    LabeledDataset empty = a;
    empty.category_names.clear();
    empty.labels = LabelMatrix(a.size(), 0);
    const auto same = merge_label_sources(a, empty);
    CHECK(same.labels == a.labels);
    CHECK(same.category_names == a.category_names);
  }
  SUBCASE("shared names OR together") {
    auto c = testing::make_dataset({{0}, {1}});
    c.category_names = {"cup"};
    const auto u = merge_label_sources(a, c);
    CHECK(u.num_categories() == 2);
    CHECK(u.labels(1, 0) == 1);
  }
  SUBCASE("disjoint id sets") {
    auto c = testing::make_dataset({{0}, {1}});
    c.ids = {"other1", "other2"};
    CHECK_THROWS_AS(merge_label_sources(a, c), DataError);
  }
}

TEST_CASE("partition_train_val") {
  std::vector<std::vector<int>> rows(10, std::vector<int>{1, 0});
  const auto ds = testing::make_dataset(rows);
  const auto s1 = partition_train_val(ds, 0.8, 5);
  CHECK(s1.train.size() == 8);
  CHECK(s1.val.size() == 2);
  const auto s2 = partition_train_val(ds, 0.8, 5);
  CHECK(s1.train.ids == s2.train.ids);
  CHECK(s1.val.ids == s2.val.ids);
  CHECK_THROWS_AS(partition_train_val(ds, 0.01, 1), DataError);

  std::vector<std::vector<int>> big(82783, std::vector<int>{0, 1});
  const auto s3 = partition_train_val(testing::make_dataset(big), 0.8, 1);
  CHECK(s3.train.size() == 66226);
  CHECK(s3.val.size() == 16557);
}

TEST_CASE("image_sets_for_pair") {
  const auto ds = testing::make_dataset({{1, 1}, {1, 0}, {0, 1}});
  const auto s = image_sets_for_pair(ds, 0, 1);
  CHECK(s.cooccur == std::vector<std::size_t>{0});
  CHECK(s.exclusive == std::vector<std::size_t>{1});
  CHECK(s.other == std::vector<std::size_t>{2});

  const auto never = testing::make_dataset({{0, 1}, {0, 0}});
  const auto n = image_sets_for_pair(never, 0, 1);
  CHECK(n.cooccur.empty());
  CHECK(n.exclusive.empty());
  CHECK(n.other.size() == 2);
  CHECK_THROWS_AS(image_sets_for_pair(ds, 0, 0), DataError);
}

TEST_CASE("ski/person test-set counts") {
  LabelMatrix y(40504, 2);
  for (std::size_t i = 0; i < 984; ++i) y(i, 0) = y(i, 1) = 1;
  for (std::size_t i = 984; i < 993; ++i) y(i, 0) = 1;
  const auto s = image_sets_for_pair(y, 0, 1);
  CHECK(s.cooccur.size() == 984);
  CHECK(s.exclusive.size() == 9);
  CHECK(s.other.size() == 39511);
}

TEST_CASE("synthetic generator co-occurrence control") {
  SyntheticConfig cfg;
  cfg.num_images = 700;
  cfg.num_categories = 6;
  cfg.presence_rate = 0.3;
  cfg.pair_specs = {{0, 1, 0.95}, {2, 3, 1.0}};
  cfg.seed = 11;
  const auto ds = generate_synthetic(cfg);
  const auto s01 = image_sets_for_pair(ds, 0, 1);
  const auto nb = s01.cooccur.size() + s01.exclusive.size();
  CHECK(nb > 0);
  const auto expected = static_cast<long>(std::llround(0.95 * static_cast<double>(nb)));
  CHECK(std::labs(static_cast<long>(s01.cooccur.size()) - expected) <= 1);
  CHECK(image_sets_for_pair(ds, 2, 3).exclusive.empty());

  SUBCASE("200 b-images at 95%") {
    SyntheticConfig c2 = cfg;
    c2.presence_rate = 1.0;
    c2.num_images = 200;
    c2.pair_specs = {{0, 1, 0.95}};
    const auto d2 = generate_synthetic(c2);
    const auto s = image_sets_for_pair(d2, 0, 1);
    CHECK(s.cooccur.size() + s.exclusive.size() == 200);
    CHECK(std::labs(static_cast<long>(s.cooccur.size()) - 190) <= 1);
    CHECK(std::labs(static_cast<long>(s.exclusive.size()) - 10) <= 1);
  }
  SUBCASE("determinism") {
    const auto again = generate_synthetic(cfg);
    CHECK(again.labels == ds.labels);
    CHECK(again.images == ds.images);
    CHECK(again.ids == ds.ids);
  }
  SUBCASE("pixels agree with labels and boxes") {
    for (std::size_t i = 0; i < 50; ++i) {
      const auto detected = detect_categories(ds.images[i], cfg.num_categories);
      const auto row = ds.labels.row(i);
      CHECK(std::vector<std::uint8_t>(row.begin(), row.end()) == detected);
      for (const auto& box : ds.boxes[i]) CHECK(ds.labels(i, box.category) == 1);
    }
  }
  SUBCASE("invalid configurations") {
    SyntheticConfig bad = cfg;
    bad.num_categories = 40;
    CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
    bad = cfg;
    bad.pair_specs = {{0, 1, 1.5}};
    CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
    bad = cfg;
    bad.pair_specs = {{0, 1, 0.5}, {1, 2, 0.5}};
    CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
  }
}

TEST_CASE("synthetic dataset directory round trip") {
  TempDir dir("syn_dir");
  SyntheticConfig cfg;
  cfg.num_images = 12;
  cfg.num_categories = 4;
  cfg.pair_specs = {{0, 1, 0.5}};
  const auto ds = generate_synthetic(cfg);
  save_dataset_dir(ds, dir.path());
  const auto back = load_dataset_dir(dir.path());
  CHECK(back.ids == ds.ids);
  CHECK(back.labels == ds.labels);
  CHECK(back.boxes == ds.boxes);
  CHECK(back.images == ds.images);
}

TEST_CASE("png round trip is exact for 8-bit values") {
  TempDir dir("png");
  auto img = gradient_image(9, 13);
  quantize_8bit(img);
  write_png(img, dir / "x.png");
  CHECK(read_png(dir / "x.png") == img);
  write_file(dir / "junk.png", "not a png");
  CHECK_THROWS(read_png(dir / "junk.png"));
}

TEST_CASE("eval preprocessing takes the spatial center") {
  const auto img = gradient_image(256, 512);
  PreprocessOptions opts;
  opts.resize_shorter = 256;
  opts.crop_size = 224;
  const auto out = preprocess_eval(img, opts);
  CHECK(out.height == 224);
  CHECK(out.width == 224);
  const auto rect = center_crop_rect(256, 512, 224);
  CHECK(rect == CropRect{16, 144, 224, 224});
  CHECK(out == crop(img, rect));
}

TEST_CASE("eval preprocessing is idempotent at crop size") {
  const auto img = gradient_image(32, 32);
  PreprocessOptions opts;
  opts.resize_shorter = 32;
  opts.crop_size = 32;
  const auto once = preprocess_eval(img, opts);
  CHECK(once == img);
  CHECK(preprocess_eval(once, opts) == once);
}

TEST_CASE("train preprocessing is reproducible") {
  const auto img = gradient_image(40, 60);
  PreprocessOptions opts;
  opts.resize_shorter = 40;
  opts.crop_size = 24;
  Rng a(9), b(9);
  CHECK(sample_resized_crop(40, 60, opts, a) == sample_resized_crop(40, 60, opts, b));
  Rng c(3), d(3);
  const auto x = preprocess_train(img, opts, c);
  CHECK(x == preprocess_train(img, opts, d));
  CHECK(x.height == 24);
  CHECK(x.width == 24);
  Rng e(1);
  for (int k = 0; k < 200; ++k) {
    const auto r = sample_resized_crop(40, 60, opts, e);
    CHECK(r.y >= 0);
    CHECK(r.x >= 0);
    CHECK(r.y + r.height <= 40);
    CHECK(r.x + r.width <= 60);
  }
}

TEST_CASE("horizontal flip") {
  const auto img = gradient_image(4, 5);
  const auto f = flip_horizontal(img);
  CHECK(f.at(2, 0, 1) == img.at(2, 4, 1));
  CHECK(flip_horizontal(f) == img);
}
