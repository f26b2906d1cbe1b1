#include "convgot/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "convgot/errors.hpp"

namespace convgot {
namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) + " != " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: " + shape_str(a) + " * " + shape_str(b));
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt: " + shape_str(a) + " * " + shape_str(b) + "^T");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto brow = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += arow[k] * brow[k];
      out(i, j) = acc;
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Matrix affine(const Matrix& x, const Matrix& W, const Matrix& b) {
  if (b.rows() != 1 || b.cols() != W.cols()) {
    throw ShapeError("affine: bias " + shape_str(b) + " for weight " + shape_str(W));
  }
  Matrix out = matmul(x, W);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
  }
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix sigmoid(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid(x[i]);
  return out;
}

Matrix elementwise_mul(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ShapeError("elementwise_mul: " + shape_str(a) + " vs " + shape_str(b));
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

Matrix softmax_rowwise(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    auto o = out.row(i);
    double mx = kMasked;
    for (double v : in) {
      if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
        throw NumericError("softmax: row " + std::to_string(i) + " holds a non-finite score");
      mx = std::max(mx, v);
    }
    if (mx == kMasked) throw DataError("softmax: row " + std::to_string(i) + " is entirely masked");
    double sum = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = in[j] == kMasked ? 0.0 : std::exp(in[j] - mx);
      sum += o[j];
    }
    for (double& v : o) v /= sum;
  }
  return out;
}

Matrix masked_attention(const Matrix& q, const Matrix& k, const Matrix& v, const Matrix& bias) {
  if (q.cols() != k.cols()) throw ShapeError("attention: query/key width mismatch");
  if (k.rows() != v.rows()) throw ShapeError("attention: key/value length mismatch");
  if (bias.rows() != q.rows() || bias.cols() != k.rows()) {
    throw ShapeError("attention: bias " + shape_str(bias) + " for " + std::to_string(q.rows()) + " queries and " +
                     std::to_string(k.rows()) + " keys");
  }
  Matrix scores = matmul_nt(q, k);
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = scores[i] * scale + bias[i];
  return matmul(softmax_rowwise(scores), v);
}

Matrix causal_bias(std::size_t n, double beta, std::size_t span) {
  Matrix bias(n, n, kMasked);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      if (i - j < span) bias(i, j) = -beta * static_cast<double>(i - j);
    }
  }
  return bias;
}

double log_sum_exp(std::span<const double> x) {
  double mx = kMasked;
  for (double v : x) mx = std::max(mx, v);
  if (mx == kMasked) return kMasked;
  double sum = 0.0;
  for (double v : x) sum += std::exp(v - mx);
  return mx + std::log(sum);
}

double cross_entropy(std::span<const double> logits, std::size_t y) {
  if (logits.size() < 2) throw ShapeError("cross_entropy: need at least 2 classes");
  if (y >= logits.size()) {
    throw DataError("cross_entropy: class " + std::to_string(y) + " out of range " + std::to_string(logits.size()));
  }
  return log_sum_exp(logits) - logits[y];
}

}  // namespace convgot
