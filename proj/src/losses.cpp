#include "briges/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>

#include "briges/errors.hpp"

namespace briges {

DisparityMap depth_to_normalized_disparity(const DepthMap& depth) {
  std::vector<double> disp(depth.size(), 0.0);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (!depth.valid(i)) continue;
    const double z = depth.values[i];
    if (!(z > 0.0) || !std::isfinite(z)) {
      throw DataError("depth at pixel " + std::to_string(i) + " is not strictly positive: " + std::to_string(z));
    }
    disp[i] = 1.0 / z;
    lo = std::min(lo, disp[i]);
    hi = std::max(hi, disp[i]);
  }
  if (!(hi > lo)) throw DegenerateInputError("disparity range is zero; min-max normalization undefined");
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (depth.valid(i)) disp[i] = (disp[i] - lo) / (hi - lo);
  }
  return DisparityMap(depth.height, depth.width, std::move(disp), depth.mask);
}

Var ssi_normalize(Var x, std::span<const std::size_t> valid) {
  const std::size_t n = valid.size();
  if (n < 2) throw DegenerateInputError("scale-shift normalization needs >= 2 valid pixels");
  const std::size_t rows = x.value().rows();
  Var xv = sparse_rows(x, std::make_shared<SparseMatrix>(SparseMatrix::gather(valid, rows)));

  // Lower median by (value, position) order.
  const Tensor& v = xv.value();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  const std::size_t pick = order[(n - 1) / 2];
  Var median = sparse_rows(xv, std::make_shared<SparseMatrix>(SparseMatrix::gather(std::span(&pick, 1), n)));

  Var centered = sub_scalar(xv, median);
  Var deviation = mean(abs(centered));
  if (!(deviation.value()[0] > 0.0)) {
    throw DegenerateInputError("scale-shift normalization: mean absolute deviation is zero");
  }
  return div_scalar(centered, deviation);
}

std::vector<double> ssi_normalize(const DisparityMap& d) {
  Graph g;
  const auto valid = d.valid_indices();
  Var normalized = ssi_normalize(g.constant(Tensor({d.size()}, d.values)), valid);
  std::vector<double> out(d.size(), 0.0);
  for (std::size_t i = 0; i < valid.size(); ++i) out[valid[i]] = normalized.value()[i];
  return out;
}

namespace {

void check_pred(Var pred, const DisparityMap& gt) {
  if (pred.value().rows() != gt.size() || pred.value().size() != gt.size()) {
    throw DimensionError("prediction " + shape_string(pred.shape()) + " does not match a " +
                         std::to_string(gt.height) + "x" + std::to_string(gt.width) + " target");
  }
}

// pred and gt normalized independently, valid pixels only.
Var normalized_residual(Var pred, const DisparityMap& gt, std::span<const std::size_t> valid) {
  Graph& g = *pred.graph();
  Var gt_norm = ssi_normalize(g.constant(Tensor(pred.shape(), gt.values)), valid);
  return sub(ssi_normalize(pred, valid), gt_norm);
}

struct Level {
  std::size_t height;
  std::size_t width;
  std::vector<std::uint8_t> mask;
};

// 2x average pool counting only valid children; partial edge windows allowed.
std::shared_ptr<SparseMatrix> masked_pool(const Level& in, Level& out) {
  out.height = (in.height + 1) / 2;
  out.width = (in.width + 1) / 2;
  out.mask.assign(out.height * out.width, 0);
  auto s = std::make_shared<SparseMatrix>(out.height * out.width, in.height * in.width);
  std::vector<std::pair<std::size_t, double>> row;
  for (std::size_t y = 0; y < out.height; ++y) {
    for (std::size_t x = 0; x < out.width; ++x) {
      row.clear();
      for (std::size_t dy = 0; dy < 2; ++dy) {
        for (std::size_t dx = 0; dx < 2; ++dx) {
          const std::size_t yy = 2 * y + dy, xx = 2 * x + dx;
          if (yy < in.height && xx < in.width && in.mask[yy * in.width + xx]) {
            row.emplace_back(yy * in.width + xx, 1.0);
          }
        }
      }
      for (auto& e : row) e.second = 1.0 / static_cast<double>(row.size());
      out.mask[y * out.width + x] = row.empty() ? 0 : 1;
      s->push_row(row);
    }
  }
  return s;
}

// Forward differences between horizontally and vertically adjacent valid pixels.
std::shared_ptr<SparseMatrix> neighbor_differences(const Level& level) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  const std::size_t h = level.height, w = level.width;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x + 1 < w; ++x) {
      const std::size_t a = y * w + x;
      if (level.mask[a] && level.mask[a + 1]) pairs.emplace_back(a, a + 1);
    }
  }
  for (std::size_t y = 0; y + 1 < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t a = y * w + x;
      if (level.mask[a] && level.mask[a + w]) pairs.emplace_back(a, a + w);
    }
  }
  auto s = std::make_shared<SparseMatrix>(pairs.size(), h * w);
  for (const auto& [a, b] : pairs) {
    const std::pair<std::size_t, double> row[2] = {{b, 1.0}, {a, -1.0}};
    s->push_row(row);
  }
  return s;
}

}  // namespace

Var affine_invariant_loss(Var pred, const DisparityMap& gt, const LossOptions& opts) {
  check_pred(pred, gt);
  const auto valid = gt.valid_indices();
  return mean(abs(normalized_residual(pred, gt, valid), opts.dead_zone));
}

Var gradient_matching_loss(Var pred, const DisparityMap& gt, const LossOptions& opts) {
  check_pred(pred, gt);
  if (opts.gm_scales == 0) throw ParameterError("gradient matching needs >= 1 scale");
  const auto valid = gt.valid_indices();
  Var residual = normalized_residual(pred, gt, valid);
  Var raster = sparse_rows(residual, std::make_shared<SparseMatrix>(SparseMatrix::scatter(valid, gt.size())));

  Level level{gt.height, gt.width, gt.mask};
  Var total;
  for (std::size_t s = 0; s < opts.gm_scales; ++s) {
    if (s > 0) {
      Level coarser;
      raster = sparse_rows(raster, masked_pool(level, coarser));
      level = std::move(coarser);
    }
    Var term = sum(abs(sparse_rows(raster, neighbor_differences(level)), opts.dead_zone));
    total = s == 0 ? term : add(total, term);
  }
  return scale(total, 1.0 / static_cast<double>(valid.size()));
}

Var combined_loss(Var pred, const DisparityMap& gt, LossMode mode, const LossOptions& opts) {
  Var ssi = affine_invariant_loss(pred, gt, opts);
  if (mode == LossMode::V1) return ssi;
  return add(ssi, scale(gradient_matching_loss(pred, gt, opts), 2.0));
}

namespace {

template <typename F>
double evaluate_loss(std::span<const double> pred, F&& f) {
  Graph g;
  Var p = g.constant(Tensor({pred.size()}, std::vector<double>(pred.begin(), pred.end())));
  return f(p).value()[0];
}

}  // namespace

double affine_invariant_loss(std::span<const double> pred, const DisparityMap& gt) {
  return evaluate_loss(pred, [&](Var p) { return affine_invariant_loss(p, gt); });
}

double gradient_matching_loss(std::span<const double> pred, const DisparityMap& gt, std::size_t n_scales) {
  LossOptions opts;
  opts.gm_scales = n_scales;
  return evaluate_loss(pred, [&](Var p) { return gradient_matching_loss(p, gt, opts); });
}

double combined_loss(std::span<const double> pred, const DisparityMap& gt, LossMode mode, std::size_t n_scales) {
  LossOptions opts;
  opts.gm_scales = n_scales;
  return evaluate_loss(pred, [&](Var p) { return combined_loss(p, gt, mode, opts); });
}

}  // namespace briges
