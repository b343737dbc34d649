#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mapi/errors.hpp"

namespace mapi {

// Dense row-major matrix of 64-bit reals. The only tensor type in the
// project; row/column vectors are 1xN / Nx1 matrices.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  static Matrix identity(std::size_t n);
  static Matrix row_vector(const std::vector<double>& v);
  static Matrix col_vector(const std::vector<double>& v);

  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool same_shape(const Matrix& o) const {
    return rows == o.rows && cols == o.cols;
  }
  bool is_scalar() const { return rows == 1 && cols == 1; }
  double scalar() const;

  bool all_finite() const;
  std::string shape_str() const;
};

// Plain (untaped) kernels; the tape ops and the no-grad forward paths share
// these.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b
Matrix transposed(const Matrix& a);

void check_same_shape(const Matrix& a, const Matrix& b, const char* where);
void check_finite(const Matrix& m, const char* where);

}  // namespace mapi
