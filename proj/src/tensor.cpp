#include "briges/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "briges/errors.hpp"

namespace briges {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

std::size_t checked_volume(const Shape& shape) {
  if (shape.empty() || shape.size() > 4) {
    throw DimensionError("tensor rank must be 1..4, got shape " + shape_string(shape));
  }
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : shape_(std::move(shape)), requires_grad_(requires_grad) {
  values_.assign(checked_volume(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : shape_(std::move(shape)), values_(std::move(values)), requires_grad_(requires_grad) {
  if (checked_volume(shape_) != values_.size()) {
    throw DimensionError("shape " + shape_string(shape_) + " does not match " +
                         std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged rows in Tensor::from_rows");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

bool Tensor::all_finite() const noexcept {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void SparseMatrix::push_row(std::span<const std::pair<std::size_t, double>> entries) {
  for (const auto& [col, w] : entries) {
    if (col >= cols) throw DimensionError("sparse column index out of range");
    index.push_back(col);
    weight.push_back(w);
  }
  row_begin.push_back(index.size());
}

SparseMatrix SparseMatrix::gather(std::span<const std::size_t> picks, std::size_t cols) {
  SparseMatrix s(picks.size(), cols);
  for (std::size_t p : picks) {
    const std::pair<std::size_t, double> e{p, 1.0};
    s.push_row(std::span(&e, 1));
  }
  return s;
}

SparseMatrix SparseMatrix::scatter(std::span<const std::size_t> targets, std::size_t rows) {
  std::vector<std::ptrdiff_t> source(rows, -1);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] >= rows) throw DimensionError("scatter target out of range");
    source[targets[i]] = static_cast<std::ptrdiff_t>(i);
  }
  SparseMatrix s(rows, targets.size());
  for (std::size_t r = 0; r < rows; ++r) {
    if (source[r] < 0) {
      s.push_row({});
    } else {
      const std::pair<std::size_t, double> e{static_cast<std::size_t>(source[r]), 1.0};
      s.push_row(std::span(&e, 1));
    }
  }
  return s;
}

Tensor apply(const SparseMatrix& s, const Tensor& x) {
  if (x.rows() != s.cols) {
    throw DimensionError("sparse operator expects " + std::to_string(s.cols) + " rows, got " +
                         shape_string(x.shape()));
  }
  Shape shape = x.shape();
  shape[0] = s.rows;
  Tensor out(shape);
  const std::size_t c = x.cols();
  for (std::size_t r = 0; r < s.rows; ++r) {
    double* dst = &out[r * c];
    for (std::size_t k = s.row_begin[r]; k < s.row_begin[r + 1]; ++k) {
      const double* src = &x[s.index[k] * c];
      const double w = s.weight[k];
      for (std::size_t j = 0; j < c; ++j) dst[j] += w * src[j];
    }
  }
  return out;
}

}  // namespace briges
