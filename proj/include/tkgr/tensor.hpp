#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace tkgr {

// Dense double-precision tensor of rank 1 (vector) or rank 2 (row-major
// matrix). A scalar is a vector of length one.
class Tensor {
 public:
  Tensor() = default;

  static Tensor vector(std::size_t n, double fill = 0.0);
  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static Tensor scalar(double value);
  static Tensor from(std::vector<double> values);
  static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> values);

  int rank() const noexcept { return rank_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool is_vector() const noexcept { return rank_ == 1; }
  bool is_matrix() const noexcept { return rank_ == 2; }
  bool is_scalar() const noexcept { return rank_ == 1 && data_.size() == 1; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  // Appends rows to a matrix; new rows are zero.
  void resize_rows(std::size_t rows);

  bool all_finite() const noexcept;
  bool same_shape(const Tensor& other) const noexcept;
  std::string shape_string() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.rank_ == b.rank_ && a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  int rank_ = 1;
  std::size_t rows_ = 0;
  std::size_t cols_ = 1;
  std::vector<double> data_;
};

// In-place y += alpha * x.
void axpy(double alpha, const Tensor& x, Tensor& y);
double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(const Tensor& t);

}  // namespace tkgr
