#pragma once

#include <cstddef>

#include "ilora/matrix.hpp"

namespace ilora {

/// Low-rank pair contributing `scaling · B · A` to a d×k weight.
class LoraAdapter {
 public:
  LoraAdapter(Matrix b_factor, Matrix a_factor, double scaling = 1.0);

  const Matrix& b() const noexcept { return b_; }
  const Matrix& a() const noexcept { return a_; }
  std::size_t rank() const noexcept { return b_.cols(); }
  std::size_t out_dim() const noexcept { return b_.rows(); }
  std::size_t in_dim() const noexcept { return a_.cols(); }
  double scaling() const noexcept { return scaling_; }

  /// Replaces both factors; shapes must match the current ones.
  void set_factors(Matrix b_factor, Matrix a_factor);

  /// scaling · B · A
  Matrix delta() const;

 private:
  Matrix b_;
  Matrix a_;
  double scaling_;
};

/// Frozen weight the adapter is added to, plus the untouched pre-trained
/// weight it was derived from. Immutable after construction.
class BaseWeight {
 public:
  BaseWeight(Matrix frozen, Matrix origin);

  const Matrix& frozen() const noexcept { return frozen_; }
  const Matrix& origin() const noexcept { return origin_; }

 private:
  Matrix frozen_;
  Matrix origin_;
};

/// Conventional LoRA multiplier alpha / rank.
double lora_scaling(double alpha, std::size_t rank);

/// Adapter whose contribution scaling·B·A equals Q[:, :rank] · R[:rank, :].
/// B is the Q slice verbatim; A is the R slice divided by `scaling`.
LoraAdapter adapter_from_slices(const Matrix& q, const Matrix& r, std::size_t rank,
                                double scaling = 1.0);

struct OrthogonalInit {
  BaseWeight base;
  LoraAdapter adapter;
};

/// QR-based initialization. The frozen weight removes the leading `base_rank`
/// QR component of theta0 (shared by every client of a federation); the
/// adapter carries the leading `client_rank` component. Requires
/// 1 <= client_rank <= base_rank <= min(d, k).
OrthogonalInit qr_orthogonal_init(const Matrix& theta0, std::size_t client_rank,
                                  std::size_t base_rank, double scaling = 1.0);

/// Same as qr_orthogonal_init with the factorization of theta0 supplied.
OrthogonalInit qr_orthogonal_init(const Matrix& theta0, const QrFactors& qr,
                                  std::size_t client_rank, std::size_t base_rank,
                                  double scaling = 1.0);

/// frozen + scaling · B · A
Matrix effective_weight(const BaseWeight& base, const LoraAdapter& adapter);

struct FactorGradients {
  Matrix grad_b;  // d × r
  Matrix grad_a;  // r × k
};

/// Chain rule through W = frozen + s·B·A:
///   ∂L/∂B = s · G · Aᵀ,  ∂L/∂A = s · Bᵀ · G.
FactorGradients factor_gradients(const LoraAdapter& adapter, const Matrix& weight_grad);

}  // namespace ilora
