#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "duw/tensor.hpp"

namespace duw {

/// Images one per row (n, C*H*W) with values in [0,1]. `labels` is empty
/// for label-free pools; `ids` are positions in the originating set.
struct ImageSet {
  ImageShape shape;
  RowMatrix<float> images;
  std::vector<int> labels;
  std::vector<int> ids;

  int size() const { return static_cast<int>(images.rows()); }
  bool labeled() const { return !labels.empty(); }
  ImageSet subset(std::span<const int> rows) const;
};

ImageSet concat(const ImageSet& a, const ImageSet& b);

/// Train/test pair from one domain.
struct LabeledDataset {
  std::string domain;
  int num_classes = 10;
  ImageSet train;
  ImageSet test;
};

/// Styles of the procedural digit renderer. "blocky" (seven-segment) is
/// the conventional held-out domain.
const std::vector<std::string>& synthetic_domains();

/// Renders `count` class-balanced digits of a style, deterministically in `seed`.
ImageSet render_digits(const std::string& domain, int count, const ImageShape& shape, std::uint64_t seed);

LabeledDataset synthetic_digits(const std::string& domain, int train_count, int test_count, const ImageShape& shape,
                                std::uint64_t seed);

/// Bilinear resize of every image (align-corners=false convention).
RowMatrix<float> resize_images(const RowMatrix<float>& images, const ImageShape& from, const ImageShape& to);

/// Reads an IDX3 image file (+ optional IDX1 labels), scales to [0,1] and
/// resizes to `target`. Grayscale sources are replicated across channels.
ImageSet load_idx(const std::string& images_path, const std::string& labels_path, const ImageShape& target,
                  int limit = -1);

std::vector<int> class_histogram(const ImageSet& set, int num_classes);

}  // namespace duw
