#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace briges {

/// H x W scalar raster with a per-pixel validity mask (1 = valid).
struct MaskedRaster {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> mask;

  MaskedRaster() = default;
  // An empty mask means every pixel is valid.
  MaskedRaster(std::size_t h, std::size_t w, std::vector<double> v, std::vector<std::uint8_t> m = {});

  std::size_t size() const noexcept { return values.size(); }
  bool valid(std::size_t i) const noexcept { return mask[i] != 0; }
  std::size_t valid_count() const noexcept;
  std::vector<std::size_t> valid_indices() const;
};

struct DepthMap : MaskedRaster {
  using MaskedRaster::MaskedRaster;
};

// Disparity normalized to [0, 1] on valid pixels.
struct DisparityMap : MaskedRaster {
  using MaskedRaster::MaskedRaster;
};

}  // namespace briges
