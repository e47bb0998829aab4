#pragma once

#include <cstddef>
#include <span>
#include <utility>

#include "ilora/matrix.hpp"

namespace ilora {

struct AdamWHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Moments for one parameter matrix.
struct AdamWState {
  Matrix m;
  Matrix v;
  std::size_t step = 0;
  AdamWHyper hyper;

  static AdamWState fresh(std::size_t rows, std::size_t cols, const AdamWHyper& hyper);
};

/// One decoupled-weight-decay Adam step with bias correction:
///   m ← β₁m + (1−β₁)g,  v ← β₂v + (1−β₂)g²
///   p ← p − lr·( m̂/(√v̂ + ε) + λ·p ),  m̂ = m/(1−β₁ᵗ), v̂ = v/(1−β₂ᵗ)
/// Throws NonFiniteError on NaN/Inf gradients and leaves its arguments intact.
void adamw_update(Matrix& param, const Matrix& grad, AdamWState& state);

/// Value form of adamw_update.
std::pair<Matrix, AdamWState> adamw_step(const Matrix& param, const Matrix& grad,
                                         const AdamWState& state);

/// Control variates for one adapter at rank `rank()`:
/// c_a is rank × k (pairs with A), c_b is d × rank (pairs with B).
struct ControlVariates {
  Matrix c_a;
  Matrix c_b;

  static ControlVariates zeros(std::size_t d, std::size_t k, std::size_t rank);
  std::size_t rank() const noexcept { return c_a.rows(); }
};

/// raw + global − local
Matrix corrected_gradient(const Matrix& raw, const Matrix& global_c, const Matrix& local_c);

struct ControlUpdate {
  Matrix delta;      // last_raw_grad − local_c
  Matrix new_local;  // last_raw_grad
};

ControlUpdate local_control_update(const Matrix& last_raw_grad, const Matrix& local_c);

/// global + (1/|deltas|) Σ deltas. Uniform weights, not sample-count weights.
Matrix server_control_aggregate(const Matrix& global_c, std::span<const Matrix> deltas);

/// Leading `rank` rows of c_a and columns of c_b.
ControlVariates slice_controls(const ControlVariates& cv, std::size_t rank);

/// Embeds rank-r_k controls into rank `target_rank` with zeros in the tail.
ControlVariates pad_controls(const ControlVariates& cv, std::size_t target_rank);

}  // namespace ilora
