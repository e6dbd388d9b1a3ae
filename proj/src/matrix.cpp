#include "vcap/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vcap/errors.hpp"
#include "vcap/rng.hpp"

namespace vcap {

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> d)
    : rows(r), cols(c), data(std::move(d)) {
  if (data.size() != rows * cols) {
    throw DimensionMismatch("matrix data length " + std::to_string(data.size()) +
                            " != " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
  std::size_t r = 0;
  for (const auto& row : rows) {
    if (row.size() != m.cols) throw DimensionMismatch("ragged initializer rows");
    std::size_t c = 0;
    for (double v : row) m.at(r, c++) = v;
    ++r;
  }
  return m;
}

std::vector<double> Matrix::row(std::size_t r) const {
  return std::vector<double>(row_ptr(r), row_ptr(r) + cols);
}

bool Matrix::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw DimensionMismatch("matmul inner dims " + std::to_string(a.cols) + " vs " +
                            std::to_string(b.rows));
  }
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.row_ptr(i);
    double* orow = out.row_ptr(i);
    for (std::size_t k = 0; k < a.cols; ++k) {
      double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.row_ptr(k);
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw DimensionMismatch("add shapes differ");
  Matrix out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  return out;
}

Matrix scale(const Matrix& a, double c) {
  Matrix out = a;
  for (double& v : out.data) v *= c;
  return out;
}

Matrix concat_rows(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) {
    throw DimensionMismatch("concat_rows row counts " + std::to_string(a.rows) + " vs " +
                            std::to_string(b.rows));
  }
  Matrix out(a.rows, a.cols + b.cols);
  for (std::size_t r = 0; r < a.rows; ++r) {
    std::copy(a.row_ptr(r), a.row_ptr(r) + a.cols, out.row_ptr(r));
    std::copy(b.row_ptr(r), b.row_ptr(r) + b.cols, out.row_ptr(r) + a.cols);
  }
  return out;
}

Matrix slice_cols(const Matrix& a, std::size_t c0, std::size_t c1) {
  if (c0 > c1 || c1 > a.cols) throw DimensionMismatch("slice_cols out of range");
  Matrix out(a.rows, c1 - c0);
  for (std::size_t r = 0; r < a.rows; ++r)
    std::copy(a.row_ptr(r) + c0, a.row_ptr(r) + c1, out.row_ptr(r));
  return out;
}

Matrix slice_rows(const Matrix& a, std::size_t r0, std::size_t r1) {
  if (r0 > r1 || r1 > a.rows) throw DimensionMismatch("slice_rows out of range");
  Matrix out(r1 - r0, a.cols);
  std::copy(a.row_ptr(r0), a.row_ptr(r0) + out.size(), out.data.data());
  return out;
}

std::vector<double> softmax_scaled(const std::vector<double>& x, double scale) {
  if (x.empty()) throw EmptyInput("softmax of empty vector");
  if (!(scale > 0.0)) throw NonPositiveScale("scale = " + std::to_string(scale));
  double inv = 1.0 / std::sqrt(scale);
  double mx = *std::max_element(x.begin(), x.end());
  std::vector<double> out(x.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp((x[i] - mx) * inv);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

Matrix softmax_rows_scaled(const Matrix& x, double scale) {
  Matrix out(x.rows, x.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    auto sm = softmax_scaled(x.row(r), scale);
    std::copy(sm.begin(), sm.end(), out.row_ptr(r));
  }
  return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionMismatch("dot lengths differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Matrix seeded_init(std::size_t rows, std::size_t cols, uint64_t seed, InitScheme scheme) {
  double s = scheme.kind == InitScheme::Kind::FanIn
                 ? 1.0 / std::sqrt(double(rows == 0 ? 1 : rows))
                 : scheme.spread;
  SplitMix64 rng(seed);
  Matrix m(rows, cols);
  for (double& v : m.data) v = rng.next_symmetric(s);
  return m;
}

}  // namespace vcap
