#include "briges/feature_alignment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "briges/errors.hpp"

namespace briges {

FeatureMap::FeatureMap(std::size_t h, std::size_t w, Tensor values)
    : height(h), width(w), data(std::move(values)) {
  if (h == 0 || w == 0 || data.rank() != 2 || data.rows() != h * w || data.cols() == 0) {
    throw DimensionError("feature map " + std::to_string(h) + "x" + std::to_string(w) +
                         " does not match data " + shape_string(data.shape()));
  }
}

FeatureMap::FeatureMap(std::size_t h, std::size_t w, std::size_t channels, double fill)
    : FeatureMap(h, w, Tensor({h * w, channels}, fill)) {}

namespace {

struct AxisSample {
  std::size_t lo;
  std::size_t hi;
  double frac;
};

AxisSample sample_axis(std::size_t i, std::size_t src, std::size_t dst) {
  if (dst == 1 || src == 1) return {0, 0, 0.0};
  const double pos = static_cast<double>(i * (src - 1)) / static_cast<double>(dst - 1);
  const auto lo = std::min(static_cast<std::size_t>(std::floor(pos)), src - 1);
  const std::size_t hi = std::min(lo + 1, src - 1);
  return {lo, hi, pos - static_cast<double>(lo)};
}

}  // namespace

SparseMatrix bilinear_matrix(Grid src, Grid dst) {
  if (src.height == 0 || src.width == 0) throw ParameterError("bilinear: empty source grid");
  if (dst.height == 0 || dst.width == 0) {
    throw ParameterError("bilinear: target grid must be at least 1x1, got " +
                         std::to_string(dst.height) + "x" + std::to_string(dst.width));
  }
  SparseMatrix s(dst.tokens(), src.tokens());
  std::vector<std::pair<std::size_t, double>> row;
  for (std::size_t y = 0; y < dst.height; ++y) {
    const AxisSample sy = sample_axis(y, src.height, dst.height);
    for (std::size_t x = 0; x < dst.width; ++x) {
      const AxisSample sx = sample_axis(x, src.width, dst.width);
      const std::array<std::pair<std::size_t, double>, 4> taps{{
          {sy.lo * src.width + sx.lo, (1.0 - sy.frac) * (1.0 - sx.frac)},
          {sy.lo * src.width + sx.hi, (1.0 - sy.frac) * sx.frac},
          {sy.hi * src.width + sx.lo, sy.frac * (1.0 - sx.frac)},
          {sy.hi * src.width + sx.hi, sy.frac * sx.frac},
      }};
      row.clear();
      for (const auto& [idx, w] : taps) {
        if (w == 0.0) continue;
        auto it = std::find_if(row.begin(), row.end(), [idx = idx](const auto& e) { return e.first == idx; });
        if (it != row.end()) {
          it->second += w;
        } else {
          row.emplace_back(idx, w);
        }
      }
      s.push_row(row);
    }
  }
  return s;
}

FeatureMap bilinear_resize(const FeatureMap& f, std::size_t target_height, std::size_t target_width) {
  const Grid dst{target_height, target_width};
  if (f.grid() == dst) return f;
  return FeatureMap(target_height, target_width, apply(bilinear_matrix(f.grid(), dst), f.data));
}

FeatureMap max_pool_2x2(const FeatureMap& f) {
  if (f.height % 2 != 0 || f.width % 2 != 0) {
    throw ParameterError("max_pool_2x2 needs an even grid, got " + std::to_string(f.height) + "x" +
                         std::to_string(f.width));
  }
  const std::size_t c = f.channels();
  FeatureMap out(f.height / 2, f.width / 2, c);
  for (std::size_t y = 0; y < out.height; ++y) {
    for (std::size_t x = 0; x < out.width; ++x) {
      for (std::size_t k = 0; k < c; ++k) {
        out.at(y, x, k) = std::max({f.at(2 * y, 2 * x, k), f.at(2 * y, 2 * x + 1, k),
                                    f.at(2 * y + 1, 2 * x, k), f.at(2 * y + 1, 2 * x + 1, k)});
      }
    }
  }
  return out;
}

FeatureMap align_semantic(const FeatureMap& semantic, Grid target) {
  if (target.height == 0 || target.width == 0) {
    throw ParameterError("align_semantic: empty target grid");
  }
  return max_pool_2x2(bilinear_resize(semantic, 2 * target.height, 2 * target.width));
}

ImageRaster preprocess_image(const ImageRaster& image, std::size_t crop, std::mt19937_64& rng) {
  if (crop == 0) throw ParameterError("preprocess_image: crop size must be >= 1");
  const std::size_t h0 = image.height, w0 = image.width;
  const std::size_t shorter = std::min(h0, w0);
  // round(crop * side / shorter), half-up, in exact integer arithmetic.
  auto scaled = [&](std::size_t side) { return (2 * crop * side + shorter) / (2 * shorter); };
  const std::size_t h1 = h0 <= w0 ? crop : scaled(h0);
  const std::size_t w1 = w0 <= h0 ? crop : scaled(w0);
  const ImageRaster resized = bilinear_resize(image, h1, w1);

  std::uniform_int_distribution<std::size_t> pick_y(0, h1 - crop);
  std::uniform_int_distribution<std::size_t> pick_x(0, w1 - crop);
  const std::size_t oy = pick_y(rng);
  const std::size_t ox = pick_x(rng);

  const std::size_t c = image.channels();
  ImageRaster out(crop, crop, c);
  for (std::size_t y = 0; y < crop; ++y) {
    for (std::size_t x = 0; x < crop; ++x) {
      for (std::size_t k = 0; k < c; ++k) out.at(y, x, k) = resized.at(oy + y, ox + x, k);
    }
  }
  return out;
}

}  // namespace briges
