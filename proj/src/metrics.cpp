#include "briges/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "briges/errors.hpp"

namespace briges {

namespace {

void check_same_size(const DepthMap& a, const DepthMap& b) {
  if (a.height != b.height || a.width != b.width) {
    throw DimensionError("depth maps differ in size: " + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                         std::to_string(b.width));
  }
}

void check_gt(const DepthMap& gt, std::size_t i) {
  if (!(gt.values[i] > 0.0)) {
    throw DataError("ground-truth depth at pixel " + std::to_string(i) + " is not strictly positive");
  }
}

}  // namespace

Alignment align_least_squares(const DepthMap& pred, const DepthMap& gt) {
  check_same_size(pred, gt);
  double sp = 0.0, sg = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!pred.valid(i) || !gt.valid(i)) continue;
    sp += pred.values[i];
    sg += gt.values[i];
    ++n;
  }
  if (n < 2) throw DegenerateInputError("alignment needs >= 2 common valid pixels");
  const double mp = sp / static_cast<double>(n), mg = sg / static_cast<double>(n);
  double spp = 0.0, spg = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!pred.valid(i) || !gt.valid(i)) continue;
    const double dp = pred.values[i] - mp;
    spp += dp * dp;
    spg += dp * (gt.values[i] - mg);
  }
  if (!(spp > 0.0)) throw DegenerateInputError("alignment: prediction has zero variance");
  const double s = spg / spp;
  return {s, mg - s * mp};
}

DepthMap apply_alignment(const DepthMap& pred, Alignment a) {
  DepthMap out = pred;
  for (double& v : out.values) v = a.scale * v + a.shift;
  return out;
}

double absrel(const DepthMap& aligned, const DepthMap& gt) {
  check_same_size(aligned, gt);
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!gt.valid(i)) continue;
    check_gt(gt, i);
    total += std::fabs(aligned.values[i] - gt.values[i]) / gt.values[i];
    ++n;
  }
  if (n == 0) throw DegenerateInputError("absrel: no valid pixels");
  return total / static_cast<double>(n);
}

double delta1(const DepthMap& aligned, const DepthMap& gt) {
  check_same_size(aligned, gt);
  std::size_t pass = 0, n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!gt.valid(i)) continue;
    check_gt(gt, i);
    ++n;
    const double a = aligned.values[i], g = gt.values[i];
    // max(a/g, g/a) < 1.25 without a division, so an exact 1.25 ratio fails.
    if (a > 0.0 && a < 1.25 * g && g < 1.25 * a) ++pass;
  }
  if (n == 0) throw DegenerateInputError("delta1: no valid pixels");
  return static_cast<double>(pass) / static_cast<double>(n);
}

double pairwise_accuracy(const DepthMap& pred, std::span<const PixelPair> pairs) {
  if (pairs.empty()) throw ParameterError("pairwise_accuracy: no pairs");
  auto depth_at = [&pred](const Pixel& p) {
    if (p.row >= pred.height || p.col >= pred.width) {
      throw DataError("pixel (" + std::to_string(p.row) + ", " + std::to_string(p.col) + ") outside " +
                      std::to_string(pred.height) + "x" + std::to_string(pred.width) + " map");
    }
    return pred.values[p.row * pred.width + p.col];
  };
  std::size_t correct = 0;
  for (const PixelPair& pair : pairs) {
    const double da = depth_at(pair.a), db = depth_at(pair.b);
    if (pair.closer == Closer::A ? da < db : db < da) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

std::vector<double> average_rank(const std::vector<std::vector<double>>& table,
                                 std::span<const Better> directions) {
  if (table.empty() || directions.empty()) throw ParameterError("average_rank: empty table");
  if (table.size() < 2) throw ParameterError("average_rank: needs >= 2 settings");
  const std::size_t n = table.size(), cols = directions.size();
  for (const auto& row : table) {
    if (row.size() != cols) throw DimensionError("average_rank: ragged table row");
  }
  std::vector<double> total(n, 0.0);
  std::vector<std::size_t> order(n);
  for (std::size_t c = 0; c < cols; ++c) {
    auto key = [&](std::size_t r) { return directions[c] == Better::Lower ? table[r][c] : -table[r][c]; };
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i + 1;
      while (j < n && key(order[j]) == key(order[i])) ++j;
      // Positions i..j-1 share ranks i+1..j.
      const double rank = 0.5 * static_cast<double>(i + 1 + j);
      for (std::size_t k = i; k < j; ++k) total[order[k]] += rank;
      i = j;
    }
  }
  for (double& t : total) t /= static_cast<double>(cols);
  return total;
}

}  // namespace briges
