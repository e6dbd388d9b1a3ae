#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

namespace vcap {

// Dense row-major matrix of doubles. All model arithmetic runs in 64-bit:
// gradient checks at 1e-4 relative tolerance are not reliable in 32-bit.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major, size == rows * cols

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> d);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  const double* row_ptr(std::size_t r) const { return data.data() + r * cols; }
  double* row_ptr(std::size_t r) { return data.data() + r * cols; }
  std::vector<double> row(std::size_t r) const;

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  bool all_finite() const;
  std::size_t size() const { return data.size(); }
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double c);

// Row t of the result is row t of `a` followed by row t of `b`.
Matrix concat_rows(const Matrix& a, const Matrix& b);
Matrix slice_cols(const Matrix& a, std::size_t c0, std::size_t c1);
Matrix slice_rows(const Matrix& a, std::size_t r0, std::size_t r1);

// softmax(x / sqrt(scale)) with the row maximum subtracted before
// exponentiation, so arbitrarily large logits cannot overflow.
std::vector<double> softmax_scaled(const std::vector<double>& x, double scale);
Matrix softmax_rows_scaled(const Matrix& x, double scale);

double dot(const std::vector<double>& a, const std::vector<double>& b);

struct InitScheme {
  enum class Kind { Uniform, FanIn };
  Kind kind = Kind::Uniform;
  double spread = 0.1;  // half-width for Uniform; FanIn uses 1/sqrt(rows)

  static InitScheme uniform(double s) { return {Kind::Uniform, s}; }
  static InitScheme fan_in() { return {Kind::FanIn, 0.0}; }
};

// Deterministic seeded fill, row-major order, one SplitMix64 draw per entry.
Matrix seeded_init(std::size_t rows, std::size_t cols, uint64_t seed, InitScheme scheme);

}  // namespace vcap
