#include "crosscue/matrix.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace crosscue {

namespace {

using EigenMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using EigenCMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

EigenCMap map(const Matrix& m) { return EigenCMap(m.data(), m.rows(), m.cols()); }
EigenMap map(Matrix& m) { return EigenMap(m.data(), m.rows(), m.cols()); }

void check_dims(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("matrix dimension mismatch in ") + what);
}

}  // namespace

bool Matrix::has_nan() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return true;
  }
  return false;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  check_dims(a.cols() == b.rows(), "matmul");
  Matrix c(a.rows(), b.cols());
  map(c).noalias() = map(a) * map(b);
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  check_dims(a.cols() == b.cols(), "matmul_nt");
  Matrix c(a.rows(), b.rows());
  map(c).noalias() = map(a) * map(b).transpose();
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  check_dims(a.rows() == b.rows(), "matmul_tn");
  Matrix c(a.cols(), b.cols());
  map(c).noalias() = map(a).transpose() * map(b);
  return c;
}

void add_matmul(Matrix& c, const Matrix& a, const Matrix& b) {
  check_dims(a.cols() == b.rows() && c.rows() == a.rows() && c.cols() == b.cols(), "add_matmul");
  map(c).noalias() += map(a) * map(b);
}

void add_matmul_nt(Matrix& c, const Matrix& a, const Matrix& b) {
  check_dims(a.cols() == b.cols() && c.rows() == a.rows() && c.cols() == b.rows(), "add_matmul_nt");
  map(c).noalias() += map(a) * map(b).transpose();
}

void add_matmul_tn(Matrix& c, const Matrix& a, const Matrix& b) {
  check_dims(a.rows() == b.rows() && c.rows() == a.cols() && c.cols() == b.cols(), "add_matmul_tn");
  map(c).noalias() += map(a).transpose() * map(b);
}

void add_inplace(Matrix& a, const Matrix& b) {
  check_dims(a.rows() == b.rows() && a.cols() == b.cols(), "add_inplace");
  map(a) += map(b);
}

void scale_inplace(Matrix& a, double s) { map(a) *= s; }

void softmax_rows(Matrix& m) {
  for (int r = 0; r < m.rows(); ++r) {
    double* row = m.row(r);
    double mx = row[0];
    for (int c = 1; c < m.cols(); ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (int c = 0; c < m.cols(); ++c) {
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    for (int c = 0; c < m.cols(); ++c) row[c] /= sum;
  }
}

}  // namespace crosscue
