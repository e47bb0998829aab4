#include "ilora/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ilora {

namespace {

// Below this many multiply-adds the OpenMP fork costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

void require_positive(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) {
    throw DimensionError("matrix dimensions must be positive, got " + std::to_string(rows) +
                         "x" + std::to_string(cols));
  }
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  require_positive(rows, cols);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require_positive(rows, cols);
  if (data_.size() != rows * cols) {
    throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string());
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() == 0 ? 0 : rows.begin()->size()) {
  require_positive(rows_, cols_);
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

std::string Matrix::shape_string() const {
  std::ostringstream os;
  os << rows_ << 'x' << cols_;
  return os.str();
}

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

Matrix& Matrix::operator+=(const Matrix& rhs) {
  require_same_shape(*this, rhs, "add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += rhs.data_[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& rhs) {
  require_same_shape(*this, rhs, "subtract");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= rhs.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double s) noexcept {
  for (double& x : data_) x *= s;
  return *this;
}

Matrix operator+(Matrix lhs, const Matrix& rhs) { return lhs += rhs; }
Matrix operator-(Matrix lhs, const Matrix& rhs) { return lhs -= rhs; }
Matrix operator*(double s, Matrix m) { return m *= s; }

Matrix matmul(const Matrix& lhs, const Matrix& rhs) {
  if (lhs.cols() != rhs.rows()) {
    throw DimensionError("matmul: cannot multiply " + lhs.shape_string() + " by " +
                         rhs.shape_string());
  }
  const std::size_t n = lhs.rows();
  const std::size_t inner = lhs.cols();
  const std::size_t m = rhs.cols();
  Matrix out(n, m);
  const bool parallel = n * m * inner >= kParallelWork && n > 1;
  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (parallel)
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    auto dst = out.row(i);
    const auto src = lhs.row(i);
    for (std::size_t p = 0; p < inner; ++p) {
      const double a = src[p];
      const auto brow = rhs.row(p);
      for (std::size_t j = 0; j < m; ++j) dst[j] += a * brow[j];
    }
  }
  return out;
}

Matrix matmul_reference(const Matrix& lhs, const Matrix& rhs) {
  if (lhs.cols() != rhs.rows()) {
    throw DimensionError("matmul: cannot multiply " + lhs.shape_string() + " by " +
                         rhs.shape_string());
  }
  Matrix out(lhs.rows(), rhs.cols());
  for (std::size_t i = 0; i < lhs.rows(); ++i) {
    for (std::size_t j = 0; j < rhs.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < lhs.cols(); ++p) s += lhs(i, p) * rhs(p, j);
      out(i, j) = s;
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& lhs, const Matrix& rhs) {
  if (lhs.rows() != rhs.rows()) {
    throw DimensionError("matmul_tn: cannot multiply transpose of " + lhs.shape_string() +
                         " by " + rhs.shape_string());
  }
  return matmul(lhs.transposed(), rhs);
}

Matrix matmul_nt(const Matrix& lhs, const Matrix& rhs) {
  if (lhs.cols() != rhs.cols()) {
    throw DimensionError("matmul_nt: cannot multiply " + lhs.shape_string() +
                         " by transpose of " + rhs.shape_string());
  }
  return matmul(lhs, rhs.transposed());
}

QrFactors thin_qr(const Matrix& m) {
  const std::size_t rows = m.rows();
  const std::size_t cols = m.cols();
  const std::size_t q = std::min(rows, cols);

  Matrix work = m;
  // Householder vectors; an empty vector marks an identity reflection.
  std::vector<std::vector<double>> reflectors(q);

  for (std::size_t j = 0; j < q; ++j) {
    const std::size_t len = rows - j;
    std::vector<double> v(len);
    double norm2 = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      v[i] = work(j + i, j);
      norm2 += v[i] * v[i];
    }
    if (norm2 == 0.0) continue;
    const double norm = std::sqrt(norm2);
    const double alpha = v[0] >= 0.0 ? -norm : norm;
    v[0] -= alpha;
    double vnorm2 = 0.0;
    for (double x : v) vnorm2 += x * x;
    if (vnorm2 == 0.0) continue;
    const double tau = 2.0 / vnorm2;

    const auto first = static_cast<std::ptrdiff_t>(j + 1);
    const auto last = static_cast<std::ptrdiff_t>(cols);
    const bool parallel = len * (cols - j) >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
    for (std::ptrdiff_t cc = first; cc < last; ++cc) {
      const auto c = static_cast<std::size_t>(cc);
      double dot = 0.0;
      for (std::size_t i = 0; i < len; ++i) dot += v[i] * work(j + i, c);
      const double s = tau * dot;
      for (std::size_t i = 0; i < len; ++i) work(j + i, c) -= s * v[i];
    }
    work(j, j) = alpha;
    for (std::size_t i = 1; i < len; ++i) work(j + i, j) = 0.0;
    reflectors[j] = std::move(v);
  }

  Matrix r(q, cols);
  for (std::size_t i = 0; i < q; ++i)
    for (std::size_t c = i; c < cols; ++c) r(i, c) = work(i, c);

  // Q = H_0 H_1 ... H_{q-1} applied to the leading q columns of the identity.
  Matrix qm(rows, q);
  for (std::size_t i = 0; i < q; ++i) qm(i, i) = 1.0;
  for (std::size_t jj = q; jj-- > 0;) {
    const auto& v = reflectors[jj];
    if (v.empty()) continue;
    double vnorm2 = 0.0;
    for (double x : v) vnorm2 += x * x;
    const double tau = 2.0 / vnorm2;
    for (std::size_t c = jj; c < q; ++c) {
      double dot = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * qm(jj + i, c);
      const double s = tau * dot;
      for (std::size_t i = 0; i < v.size(); ++i) qm(jj + i, c) -= s * v[i];
    }
  }

  for (std::size_t i = 0; i < q; ++i) {
    if (r(i, i) < 0.0) {
      for (std::size_t c = i; c < cols; ++c) r(i, c) = -r(i, c);
      for (std::size_t k = 0; k < rows; ++k) qm(k, i) = -qm(k, i);
    }
  }
  return {std::move(qm), std::move(r)};
}

double frobenius_norm(const Matrix& m) noexcept {
  double s = 0.0;
  for (double x : m.data()) s += x * x;
  return std::sqrt(s);
}

double max_abs(const Matrix& m) noexcept {
  double s = 0.0;
  for (double x : m.data()) s = std::max(s, std::abs(x));
  return s;
}

double orthonormality_defect(const Matrix& q) {
  Matrix g = matmul_tn(q, q);
  for (std::size_t i = 0; i < g.rows(); ++i) g(i, i) -= 1.0;
  return max_abs(g);
}

Matrix slice_cols(const Matrix& m, std::size_t first_n) {
  if (first_n == 0 || first_n > m.cols()) {
    throw RankError("slice_cols: " + std::to_string(first_n) + " outside [1, " +
                    std::to_string(m.cols()) + "]");
  }
  Matrix out(m.rows(), first_n);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < first_n; ++j) out(i, j) = m(i, j);
  return out;
}

Matrix slice_rows(const Matrix& m, std::size_t first_n) {
  if (first_n == 0 || first_n > m.rows()) {
    throw RankError("slice_rows: " + std::to_string(first_n) + " outside [1, " +
                    std::to_string(m.rows()) + "]");
  }
  std::vector<double> data(m.data().begin(),
                           m.data().begin() + static_cast<std::ptrdiff_t>(first_n * m.cols()));
  return Matrix(first_n, m.cols(), std::move(data));
}

double trailing_rows_norm(const Matrix& m, std::size_t first_row) noexcept {
  double s = 0.0;
  for (std::size_t i = first_row; i < m.rows(); ++i)
    for (double x : m.row(i)) s += x * x;
  return std::sqrt(s);
}

double subspace_residual(const Matrix& basis, const Matrix& v) {
  if (basis.rows() != v.rows()) {
    throw DimensionError("subspace_residual: basis " + basis.shape_string() +
                         " incompatible with " + v.shape_string());
  }
  const double defect = orthonormality_defect(basis);
  if (!(defect <= 1e-8)) {
    throw BasisError("subspace_residual: basis columns not orthonormal (defect " +
                     std::to_string(defect) + ")");
  }
  const Matrix coeffs = matmul_tn(basis, v);
  return frobenius_norm(v - matmul(basis, coeffs));
}

Matrix hstack(const std::vector<Matrix>& blocks) {
  if (blocks.empty()) throw DimensionError("hstack: no blocks");
  const std::size_t rows = blocks.front().rows();
  std::size_t cols = 0;
  for (const auto& b : blocks) {
    if (b.rows() != rows) {
      throw DimensionError("hstack: row mismatch " + blocks.front().shape_string() + " vs " +
                           b.shape_string());
    }
    cols += b.cols();
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (const auto& b : blocks) {
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, offset + j) = b(i, j);
    offset += b.cols();
  }
  return out;
}

Matrix vstack(const std::vector<Matrix>& blocks) {
  if (blocks.empty()) throw DimensionError("vstack: no blocks");
  const std::size_t cols = blocks.front().cols();
  std::vector<double> data;
  std::size_t rows = 0;
  for (const auto& b : blocks) {
    if (b.cols() != cols) {
      throw DimensionError("vstack: column mismatch " + blocks.front().shape_string() +
                           " vs " + b.shape_string());
    }
    data.insert(data.end(), b.data().begin(), b.data().end());
    rows += b.rows();
  }
  return Matrix(rows, cols, std::move(data));
}

Matrix zero_pad(const Matrix& m, std::size_t rows, std::size_t cols) {
  if (rows < m.rows() || cols < m.cols()) {
    throw RankError("zero_pad: target " + std::to_string(rows) + "x" + std::to_string(cols) +
                    " smaller than " + m.shape_string());
  }
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(i, j);
  return out;
}

}  // namespace ilora
