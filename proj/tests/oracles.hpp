#pragma once

// Reference computations written independently of the library kernels.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "ilora/matrix.hpp"

namespace oracle {

using ilora::Matrix;

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                            double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = n(rng);
  }
  return m;
}

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline Matrix product(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double s = 0.0L;
      for (std::size_t t = 0; t < a.cols(); ++t) s += static_cast<long double>(a(i, t)) * b(t, j);
      out(i, j) = static_cast<double>(s);
    }
  }
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  }
  return out;
}

inline Matrix plus(const Matrix& a, const Matrix& b, double sb = 1.0) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j) + sb * b(i, j);
  }
  return out;
}

inline double norm(const Matrix& a) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) s += static_cast<long double>(a(i, j)) * a(i, j);
  }
  return std::sqrt(static_cast<double>(s));
}

inline double distance(const Matrix& a, const Matrix& b) { return norm(plus(a, b, -1.0)); }

// max |(QᵀQ − I)_ij|
inline double orthonormality(const Matrix& q) {
  const Matrix g = product(transpose(q), q);
  double worst = 0.0;
  for (std::size_t i = 0; i < g.rows(); ++i) {
    for (std::size_t j = 0; j < g.cols(); ++j) {
      worst = std::max(worst, std::abs(g(i, j) - (i == j ? 1.0 : 0.0)));
    }
  }
  return worst;
}

// ‖v − Q Qᵀ v‖_F
inline double residual(const Matrix& q, const Matrix& v) {
  return distance(v, product(q, product(transpose(q), v)));
}

// Mean softmax cross-entropy of logits x·Wᵀ + b, one sample at a time.
inline double cross_entropy(const Matrix& features, const std::vector<std::size_t>& labels,
                            const Matrix& w, const Matrix& bias) {
  double total = 0.0;
  for (std::size_t n = 0; n < features.rows(); ++n) {
    std::vector<double> z(w.rows());
    double peak = -INFINITY;
    for (std::size_t c = 0; c < w.rows(); ++c) {
      z[c] = bias(0, c);
      for (std::size_t j = 0; j < w.cols(); ++j) z[c] += features(n, j) * w(c, j);
      peak = std::max(peak, z[c]);
    }
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - peak);
    total += std::log(sum) + peak - z[labels[n]];
  }
  return total / static_cast<double>(features.rows());
}

// tanh(X · Hᵀ)
inline Matrix hidden_features(const Matrix& x, const Matrix& h) {
  Matrix out = product(x, transpose(h));
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) = std::tanh(out(i, j));
  }
  return out;
}

}  // namespace oracle
