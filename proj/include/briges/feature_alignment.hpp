#pragma once

#include <cstddef>
#include <random>

#include "briges/tensor.hpp"

namespace briges {

struct Grid {
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t tokens() const noexcept { return height * width; }
  friend bool operator==(const Grid&, const Grid&) = default;
};

/// Token grid stored as an (H*W) x C tensor, tokens in row-major grid order.
/// Images use the same layout (pixels x channels).
struct FeatureMap {
  std::size_t height = 0;
  std::size_t width = 0;
  Tensor data;

  FeatureMap() = default;
  FeatureMap(std::size_t h, std::size_t w, Tensor values);
  FeatureMap(std::size_t h, std::size_t w, std::size_t channels, double fill = 0.0);

  Grid grid() const noexcept { return {height, width}; }
  std::size_t channels() const noexcept { return data.cols(); }
  double& at(std::size_t y, std::size_t x, std::size_t c) { return data.at(y * width + x, c); }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return data.at(y * width + x, c); }
};

using ImageRaster = FeatureMap;

// Align-corners bilinear weights mapping a src grid onto a dst grid; rows
// are dst tokens, columns src tokens.
SparseMatrix bilinear_matrix(Grid src, Grid dst);

FeatureMap bilinear_resize(const FeatureMap& f, std::size_t target_height, std::size_t target_width);
FeatureMap max_pool_2x2(const FeatureMap& f);

/// Resample the semantic feature onto a depth-feature grid: bilinear
/// resize to twice the target grid, then 2x2 stride-2 max pooling.
FeatureMap align_semantic(const FeatureMap& semantic, Grid target);

/// Resize so the shorter side equals crop (aspect preserved, long side
/// rounded half-up), then take a uniformly placed crop x crop window.
ImageRaster preprocess_image(const ImageRaster& image, std::size_t crop, std::mt19937_64& rng);

}  // namespace briges
