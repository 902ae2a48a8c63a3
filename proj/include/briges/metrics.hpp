#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "briges/raster.hpp"

namespace briges {

struct Alignment {
  double scale = 1.0;
  double shift = 0.0;
};

struct MetricsReport {
  std::string dataset;
  double absrel = 0.0;
  double delta1 = 0.0;
  double scale = 1.0;
  double shift = 0.0;
  std::size_t n_valid = 0;
};

// Least-squares (scale, shift) mapping pred onto gt over pixels valid in both.
Alignment align_least_squares(const DepthMap& pred, const DepthMap& gt);
DepthMap apply_alignment(const DepthMap& pred, Alignment a);

// Mean |aligned - gt| / gt over valid gt pixels.
double absrel(const DepthMap& aligned, const DepthMap& gt);
// Fraction of valid pixels with max(a/g, g/a) < 1.25; non-positive predictions fail.
double delta1(const DepthMap& aligned, const DepthMap& gt);

struct Pixel {
  std::size_t row = 0;
  std::size_t col = 0;
};

enum class Closer { A, B };

struct PixelPair {
  Pixel a;
  Pixel b;
  Closer closer = Closer::A;
};

// Fraction of pairs whose predicted depth ordering matches the label; ties are wrong.
double pairwise_accuracy(const DepthMap& pred, std::span<const PixelPair> pairs);

enum class Better { Lower, Higher };

/// Fractional ranks per column (1 = best, ties share the mean rank),
/// averaged per setting (row).
std::vector<double> average_rank(const std::vector<std::vector<double>>& table,
                                 std::span<const Better> directions);

}  // namespace briges
