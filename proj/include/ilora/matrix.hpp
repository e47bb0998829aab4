#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ilora {

/// Raised when operand shapes do not conform.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a requested rank or slice width is outside the legal range.
class RankError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Raised when a basis expected to be orthonormal is not.
class BasisError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised on NaN/Inf in gradients, losses or parameters.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of doubles. Both dimensions are at least one.
class Matrix {
 public:
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  std::string shape_string() const;
  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const noexcept;

  Matrix transposed() const;

  Matrix& operator+=(const Matrix& rhs);
  Matrix& operator-=(const Matrix& rhs);
  Matrix& operator*=(double s) noexcept;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> data_;
};

Matrix operator+(Matrix lhs, const Matrix& rhs);
Matrix operator-(Matrix lhs, const Matrix& rhs);
Matrix operator*(double s, Matrix m);

/// Matrix product. Rows of the output are distributed across OpenMP threads
/// once the work is large enough; each entry is accumulated in the same
/// order as matmul_reference, so results do not depend on the thread count.
Matrix matmul(const Matrix& lhs, const Matrix& rhs);

/// Serial triple-loop product kept as the reference for the parallel kernel.
Matrix matmul_reference(const Matrix& lhs, const Matrix& rhs);

/// lhsᵀ · rhs without materializing the transpose.
Matrix matmul_tn(const Matrix& lhs, const Matrix& rhs);

/// lhs · rhsᵀ without materializing the transpose.
Matrix matmul_nt(const Matrix& lhs, const Matrix& rhs);

struct QrFactors {
  Matrix q;  // rows × min(rows, cols), orthonormal columns
  Matrix r;  // min(rows, cols) × cols, upper triangular, diag >= 0
};

/// Thin Householder QR. The diagonal of R is made nonnegative by flipping the
/// matching column of Q and row of R, so the factorization is deterministic.
/// Rank-deficient inputs are legal; no column pivoting is done.
QrFactors thin_qr(const Matrix& m);

double frobenius_norm(const Matrix& m) noexcept;

/// Largest absolute entry.
double max_abs(const Matrix& m) noexcept;

/// ‖QᵀQ − I‖_max.
double orthonormality_defect(const Matrix& q);

/// Leading `first_n` columns / rows as a copy.
Matrix slice_cols(const Matrix& m, std::size_t first_n);
Matrix slice_rows(const Matrix& m, std::size_t first_n);

/// Frobenius norm of rows [first_row, rows) of m; zero when first_row >= rows.
double trailing_rows_norm(const Matrix& m, std::size_t first_row) noexcept;

/// ‖v − B Bᵀ v‖_F. `basis` must have orthonormal columns to within 1e-8.
double subspace_residual(const Matrix& basis, const Matrix& v);

/// [a | b]
Matrix hstack(const std::vector<Matrix>& blocks);
/// [a ; b]
Matrix vstack(const std::vector<Matrix>& blocks);

/// Copy of m embedded in the top-left corner of a rows × cols zero matrix.
Matrix zero_pad(const Matrix& m, std::size_t rows, std::size_t cols);

}  // namespace ilora
