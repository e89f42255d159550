#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "omniseq/errors.hpp"
#include "omniseq/rng.hpp"

namespace omniseq {

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix row_vector(std::span<const double> values);
  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

void require_same_shape(const Matrix& a, const Matrix& b, const char* what);

Matrix matmul(const Matrix& a, const Matrix& b);
// a * b^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// a^T * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

double dot(std::span<const double> a, std::span<const double> b);

// Max-subtracted softmax. Throws DimensionError on empty input.
std::vector<double> softmax(std::span<const double> v);
double log_sum_exp(std::span<const double> v);

// Row-wise normalization to zero mean / unit (population) variance, followed
// by the affine transform `gain * x_hat + bias`.
Matrix layer_norm(const Matrix& x, std::span<const double> gain, std::span<const double> bias,
                  double epsilon);

// Inverted-dropout mask: entries are 0 with probability `rate`, else 1/(1-rate).
Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng);

}  // namespace omniseq
