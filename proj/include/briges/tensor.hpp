#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace briges {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles, rank 1 to 4.
///
/// A rank-2 view is used throughout: rows() is the leading dimension and
/// cols() the product of the remaining ones, so a shape {n} vector is an
/// n x 1 column.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t rows() const noexcept { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const noexcept { return rows() == 0 ? 0 : size() / rows(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  const std::vector<double>& storage() const noexcept { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  const double& operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  const double& at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool flag) noexcept { requires_grad_ = flag; }

  bool all_finite() const noexcept;
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

 private:
  Shape shape_;
  std::vector<double> values_;
  bool requires_grad_ = false;
};

/// Compressed sparse row matrix of fixed linear weights (resampling,
/// pooling, gathers, finite differences).
struct SparseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_begin{0};
  std::vector<std::size_t> index;
  std::vector<double> weight;

  SparseMatrix() = default;
  SparseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c) { row_begin.reserve(r + 1); }

  // Rows must be appended in order; each call closes one row.
  void push_row(std::span<const std::pair<std::size_t, double>> entries);
  std::size_t nonzeros() const noexcept { return index.size(); }

  static SparseMatrix gather(std::span<const std::size_t> picks, std::size_t cols);
  static SparseMatrix scatter(std::span<const std::size_t> targets, std::size_t rows);
};

// out (rows x C) = S * x (S.cols x C), sequential row-major accumulation.
Tensor apply(const SparseMatrix& s, const Tensor& x);

}  // namespace briges
