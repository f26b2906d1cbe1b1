#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace convgot {

// Sentinel for masked attention scores; softmax maps it to probability 0.
inline constexpr double kMasked = -std::numeric_limits<double>::infinity();

// Dense row-major matrix of doubles. Vectors are 1xN rows.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix row_vector(std::span<const double> values);
  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& storage() const { return data_; }

  bool same_shape(const Matrix& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }
  void fill(double v);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Value-level kernels. Shape mismatches throw ShapeError.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix transpose(const Matrix& a);

// out = x W + b, with b broadcast over rows (b is 1 x W.cols()).
Matrix affine(const Matrix& x, const Matrix& W, const Matrix& b);

double sigmoid(double x);
Matrix sigmoid(const Matrix& x);
Matrix elementwise_mul(const Matrix& a, const Matrix& b);

// Row-wise softmax with max subtraction. Entries equal to kMasked get probability 0;
// a row with every entry masked throws DataError.
Matrix softmax_rowwise(const Matrix& x);

// out_i = sum_j softmax_j(q_i . k_j / sqrt(d) + bias_ij) v_j
Matrix masked_attention(const Matrix& q, const Matrix& k, const Matrix& v, const Matrix& bias);

// Causal temporal-neighborhood bias: -beta * (i - j) for j <= i within `span` positions, masked otherwise.
Matrix causal_bias(std::size_t n, double beta, std::size_t span = std::numeric_limits<std::size_t>::max());

double log_sum_exp(std::span<const double> x);

// -log softmax(logits)[y]
double cross_entropy(std::span<const double> logits, std::size_t y);

}  // namespace convgot
