#pragma once

#include <cassert>
#include <string>
#include <vector>

namespace crosscue {

// Dense row-major matrix of doubles; the universal numeric carrier of the
// model code. 64-bit throughout so finite-difference gradient checks are
// meaningful.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols) : rows_(rows), cols_(cols), values_(static_cast<size_t>(rows) * cols, 0.0) {}

  static Matrix zeros(int rows, int cols) { return Matrix(rows, cols); }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool empty() const { return values_.empty(); }
  size_t size() const { return values_.size(); }

  double& operator()(int r, int c) {
    assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
    return values_[static_cast<size_t>(r) * cols_ + c];
  }
  double operator()(int r, int c) const {
    assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
    return values_[static_cast<size_t>(r) * cols_ + c];
  }
  double& operator[](size_t i) { return values_[i]; }
  double operator[](size_t i) const { return values_[i]; }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  double* row(int r) { return values_.data() + static_cast<size_t>(r) * cols_; }
  const double* row(int r) const { return values_.data() + static_cast<size_t>(r) * cols_; }

  void fill(double v) { values_.assign(values_.size(), v); }
  void set_zero() { fill(0.0); }

  bool has_nan() const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> values_;
};

// C = A * B
Matrix matmul(const Matrix& a, const Matrix& b);
// C = A * B^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// C = A^T * B
Matrix matmul_tn(const Matrix& a, const Matrix& b);
// C += A * B and friends, for gradient accumulation.
void add_matmul(Matrix& c, const Matrix& a, const Matrix& b);
void add_matmul_nt(Matrix& c, const Matrix& a, const Matrix& b);
void add_matmul_tn(Matrix& c, const Matrix& a, const Matrix& b);

void add_inplace(Matrix& a, const Matrix& b);
void scale_inplace(Matrix& a, double s);

// Row-wise softmax in place (max-shifted).
void softmax_rows(Matrix& m);

}  // namespace crosscue
