#include "omniseq/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace omniseq {

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  Matrix m(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged initializer for Matrix");
    std::copy(row.begin(), row.end(), m.row(i++).begin());
  }
  return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
  Matrix m(1, values.size());
  std::copy(values.begin(), values.end(), m.data_.begin());
  return m;
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": shape " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + std::to_string(a.cols()) + " cols vs " +
                         std::to_string(b.rows()) + " rows");
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double s = a(i, k);
      if (s == 0.0) continue;
      auto src = b.row(k);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += s * src[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw DimensionError("matmul_nt: inner dimensions differ");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw DimensionError("matmul_tn: inner dimensions differ");
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto src = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double s = a(k, i);
      if (s == 0.0) continue;
      auto dst = out.row(i);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += s * src[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> softmax(std::span<const double> v) {
  if (v.empty()) throw DimensionError("softmax of an empty vector");
  const double m = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    z += out[i];
  }
  for (double& x : out) x /= z;
  return out;
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw DimensionError("log_sum_exp of an empty vector");
  const double m = *std::max_element(v.begin(), v.end());
  double z = 0.0;
  for (double x : v) z += std::exp(x - m);
  return m + std::log(z);
}

Matrix layer_norm(const Matrix& x, std::span<const double> gain, std::span<const double> bias,
                  double epsilon) {
  if (gain.size() != x.cols() || bias.size() != x.cols()) {
    throw DimensionError("layer_norm: gain/bias length must equal column count");
  }
  Matrix out(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + epsilon);
    auto dst = out.row(r);
    for (std::size_t c = 0; c < in.size(); ++c) dst[c] = gain[c] * (in[c] - mean) * inv + bias[c];
  }
  return out;
}

Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
  Matrix mask(rows, cols, 1.0);
  if (rate == 0.0) return mask;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (double& m : mask.values()) m = unit(rng) < rate ? 0.0 : keep_scale;
  return mask;
}

}  // namespace omniseq
