#include "ctxbias/batching.hpp"

#include "ctxbias/error.hpp"

namespace ctxbias::train {

model::Tensor4 pack_images(std::span<const data::Image> images) {
  if (images.empty()) return {};
  const auto& first = images.front();
  model::Tensor4 t(static_cast<int>(images.size()), first.channels, first.height,
                   first.width);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& img = images[i];
    if (img.height != first.height || img.width != first.width ||
        img.channels != first.channels) {
      throw DataError("batch images differ in size after preprocessing");
    }
    double* dst = t.sample(static_cast<int>(i));
    for (int c = 0; c < img.channels; ++c) {
      for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
          dst[(c * img.height + y) * img.width + x] = img.at(y, x, c);
        }
      }
    }
  }
  return t;
}

Batch Batch::select(std::span<const std::size_t> positions) const {
  Batch out;
  out.images = model::Tensor4(static_cast<int>(positions.size()), images.c,
                              images.h, images.w);
  out.targets.resize(static_cast<Eigen::Index>(positions.size()), targets.cols());
  if (weights.size() != 0) {
    out.weights.resize(static_cast<Eigen::Index>(positions.size()), weights.cols());
  }
  for (std::size_t k = 0; k < positions.size(); ++k) {
    const auto p = positions[k];
    out.rows.push_back(rows[p]);
    std::copy_n(images.sample(static_cast<int>(p)), images.sample_size(),
                out.images.sample(static_cast<int>(k)));
    out.targets.row(static_cast<Eigen::Index>(k)) = targets.row(static_cast<Eigen::Index>(p));
    if (weights.size() != 0) {
      out.weights.row(static_cast<Eigen::Index>(k)) = weights.row(static_cast<Eigen::Index>(p));
    }
  }
  return out;
}

Batch make_batch(const data::LabeledDataset& dataset,
                 std::span<const std::size_t> rows,
                 const data::PreprocessOptions& preprocess, Rng* augment_rng,
                 const Eigen::MatrixXd& row_weights) {
  Batch batch;
  batch.rows.assign(rows.begin(), rows.end());
  std::vector<data::Image> images;
  images.reserve(rows.size());
  for (auto r : rows) {
    const auto img = dataset.load_image(r);
    images.push_back(augment_rng ? data::preprocess_train(img, preprocess, *augment_rng)
                                 : data::preprocess_eval(img, preprocess));
  }
  batch.images = pack_images(images);
  const auto m = static_cast<Eigen::Index>(dataset.num_categories());
  batch.targets.resize(static_cast<Eigen::Index>(rows.size()), m);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    for (Eigen::Index j = 0; j < m; ++j) {
      batch.targets(static_cast<Eigen::Index>(k), j) =
          dataset.labels(rows[k], static_cast<std::size_t>(j));
    }
  }
  if (row_weights.size() != 0) {
    batch.weights.resize(static_cast<Eigen::Index>(rows.size()), m);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      batch.weights.row(static_cast<Eigen::Index>(k)) =
          row_weights.row(static_cast<Eigen::Index>(rows[k]));
    }
  }
  return batch;
}

}  // namespace ctxbias::train
