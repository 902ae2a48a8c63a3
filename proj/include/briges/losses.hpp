#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "briges/autodiff.hpp"
#include "briges/raster.hpp"

namespace briges {

// V1: affine-invariant term only. V2: affine-invariant + 2 x gradient matching.
enum class LossMode { V1, V2 };

struct LossOptions {
  std::size_t gm_scales = 4;
  // Residuals at or below this magnitude contribute zero subgradient.
  double dead_zone = 1e-12;
};

DisparityMap depth_to_normalized_disparity(const DepthMap& depth);

/// (d - median) / mean|d - median| over valid pixels. Even counts use the
/// lower of the two middle order statistics.
std::vector<double> ssi_normalize(const DisparityMap& d);
// Differentiable form; returns the normalized valid entries in index order.
Var ssi_normalize(Var x, std::span<const std::size_t> valid);

Var affine_invariant_loss(Var pred, const DisparityMap& gt, const LossOptions& opts = {});
Var gradient_matching_loss(Var pred, const DisparityMap& gt, const LossOptions& opts = {});
Var combined_loss(Var pred, const DisparityMap& gt, LossMode mode, const LossOptions& opts = {});

double affine_invariant_loss(std::span<const double> pred, const DisparityMap& gt);
double gradient_matching_loss(std::span<const double> pred, const DisparityMap& gt, std::size_t n_scales = 4);
double combined_loss(std::span<const double> pred, const DisparityMap& gt, LossMode mode,
                     std::size_t n_scales = 4);

}  // namespace briges
