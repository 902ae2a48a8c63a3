#include "briges/raster.hpp"

#include <string>

#include "briges/errors.hpp"

namespace briges {

MaskedRaster::MaskedRaster(std::size_t h, std::size_t w, std::vector<double> v, std::vector<std::uint8_t> m)
    : height(h), width(w), values(std::move(v)), mask(std::move(m)) {
  if (mask.empty()) mask.assign(values.size(), 1);
  if (values.size() != h * w || mask.size() != h * w) {
    throw DimensionError("raster " + std::to_string(h) + "x" + std::to_string(w) + " given " +
                         std::to_string(values.size()) + " values and " + std::to_string(mask.size()) +
                         " mask entries");
  }
}

std::size_t MaskedRaster::valid_count() const noexcept {
  std::size_t n = 0;
  for (auto m : mask) n += m != 0;
  return n;
}

std::vector<std::size_t> MaskedRaster::valid_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) out.push_back(i);
  }
  return out;
}

}  // namespace briges
