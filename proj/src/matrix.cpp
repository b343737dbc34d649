#include "mapi/matrix.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/Dense>

namespace mapi {

namespace {
using EigenMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>;
using EigenMutMap =
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>>;
}  // namespace

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

Matrix Matrix::row_vector(const std::vector<double>& v) {
  Matrix m(1, v.size());
  m.data = v;
  return m;
}

Matrix Matrix::col_vector(const std::vector<double>& v) {
  Matrix m(v.size(), 1);
  m.data = v;
  return m;
}

double Matrix::scalar() const {
  if (!is_scalar())
    throw ShapeError("scalar() on non-1x1 matrix " + shape_str());
  return data[0];
}

bool Matrix::all_finite() const {
  for (double x : data)
    if (!std::isfinite(x)) return false;
  return true;
}

std::string Matrix::shape_str() const {
  std::ostringstream os;
  os << rows << "x" << cols;
  return os.str();
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw ShapeError("matmul: inner dimensions differ, " + a.shape_str() +
                     " * " + b.shape_str());
  Matrix out(a.rows, b.cols);
  if (out.size() == 0) return out;
  EigenMap ma(a.data.data(), static_cast<Eigen::Index>(a.rows),
              static_cast<Eigen::Index>(a.cols));
  EigenMap mb(b.data.data(), static_cast<Eigen::Index>(b.rows),
              static_cast<Eigen::Index>(b.cols));
  EigenMutMap mo(out.data.data(), static_cast<Eigen::Index>(out.rows),
                 static_cast<Eigen::Index>(out.cols));
  mo.noalias() = ma * mb;
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols)
    throw ShapeError("matmul_nt: inner dimensions differ, " + a.shape_str() +
                     " * " + b.shape_str() + "^T");
  Matrix out(a.rows, b.rows);
  if (out.size() == 0) return out;
  EigenMap ma(a.data.data(), static_cast<Eigen::Index>(a.rows),
              static_cast<Eigen::Index>(a.cols));
  EigenMap mb(b.data.data(), static_cast<Eigen::Index>(b.rows),
              static_cast<Eigen::Index>(b.cols));
  EigenMutMap mo(out.data.data(), static_cast<Eigen::Index>(out.rows),
                 static_cast<Eigen::Index>(out.cols));
  mo.noalias() = ma * mb.transpose();
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows)
    throw ShapeError("matmul_tn: inner dimensions differ, " + a.shape_str() +
                     "^T * " + b.shape_str());
  Matrix out(a.cols, b.cols);
  if (out.size() == 0) return out;
  EigenMap ma(a.data.data(), static_cast<Eigen::Index>(a.rows),
              static_cast<Eigen::Index>(a.cols));
  EigenMap mb(b.data.data(), static_cast<Eigen::Index>(b.rows),
              static_cast<Eigen::Index>(b.cols));
  EigenMutMap mo(out.data.data(), static_cast<Eigen::Index>(out.rows),
                 static_cast<Eigen::Index>(out.cols));
  mo.noalias() = ma.transpose() * mb;
  return out;
}

Matrix transposed(const Matrix& a) {
  Matrix out(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* where) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(where) + ": shapes differ, " + a.shape_str() +
                     " vs " + b.shape_str());
}

void check_finite(const Matrix& m, const char* where) {
  if (!m.all_finite())
    throw ContractError(std::string(where) + ": non-finite entry in " +
                        m.shape_str() + " matrix");
}

}  // namespace mapi
