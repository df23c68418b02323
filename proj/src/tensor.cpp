#include "tkgr/tensor.hpp"

#include <cmath>

#include "tkgr/error.hpp"

namespace tkgr {

Tensor Tensor::vector(std::size_t n, double fill) {
  Tensor t;
  t.rank_ = 1;
  t.rows_ = n;
  t.cols_ = 1;
  t.data_.assign(n, fill);
  return t;
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill) {
  Tensor t;
  t.rank_ = 2;
  t.rows_ = rows;
  t.cols_ = cols;
  t.data_.assign(rows * cols, fill);
  return t;
}

Tensor Tensor::scalar(double value) { return vector(1, value); }

Tensor Tensor::from(std::vector<double> values) {
  Tensor t;
  t.rank_ = 1;
  t.rows_ = values.size();
  t.cols_ = 1;
  t.data_ = std::move(values);
  return t;
}

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::vector<double> values) {
  if (values.size() != rows * cols) {
    throw ShapeError("matrix " + std::to_string(rows) + "x" + std::to_string(cols) + " given " +
                     std::to_string(values.size()) + " values");
  }
  Tensor t;
  t.rank_ = 2;
  t.rows_ = rows;
  t.cols_ = cols;
  t.data_ = std::move(values);
  return t;
}

void Tensor::resize_rows(std::size_t rows) {
  if (rank_ != 2) throw ShapeError("resize_rows on a vector");
  rows_ = rows;
  data_.resize(rows * cols_, 0.0);
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool Tensor::same_shape(const Tensor& other) const noexcept {
  return rank_ == other.rank_ && rows_ == other.rows_ && cols_ == other.cols_;
}

std::string Tensor::shape_string() const {
  if (rank_ == 1) return "[" + std::to_string(rows_) + "]";
  return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

void axpy(double alpha, const Tensor& x, Tensor& y) {
  if (!x.same_shape(y)) throw ShapeError("axpy " + x.shape_string() + " vs " + y.shape_string());
  auto xs = x.values();
  auto ys = y.values();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] += alpha * xs[i];
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_norm(const Tensor& t) {
  auto v = t.values();
  return dot(v, v);
}

}  // namespace tkgr
