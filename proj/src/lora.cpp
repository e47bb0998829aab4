#include "ilora/lora.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ilora {

LoraAdapter::LoraAdapter(Matrix b_factor, Matrix a_factor, double scaling)
    : b_(std::move(b_factor)), a_(std::move(a_factor)), scaling_(scaling) {
  if (b_.cols() != a_.rows()) {
    throw DimensionError("LoraAdapter: B " + b_.shape_string() + " and A " +
                         a_.shape_string() + " disagree on rank");
  }
  if (rank() > std::min(out_dim(), in_dim())) {
    throw RankError("LoraAdapter: rank " + std::to_string(rank()) + " exceeds min(" +
                    std::to_string(out_dim()) + ", " + std::to_string(in_dim()) + ")");
  }
  if (!(scaling_ > 0.0) || !std::isfinite(scaling_)) {
    throw std::invalid_argument("LoraAdapter: scaling must be positive and finite");
  }
}

void LoraAdapter::set_factors(Matrix b_factor, Matrix a_factor) {
  if (!b_factor.same_shape(b_) || !a_factor.same_shape(a_)) {
    throw DimensionError("LoraAdapter::set_factors: expected " + b_.shape_string() + " and " +
                         a_.shape_string() + ", got " + b_factor.shape_string() + " and " +
                         a_factor.shape_string());
  }
  b_ = std::move(b_factor);
  a_ = std::move(a_factor);
}

Matrix LoraAdapter::delta() const {
  Matrix d = matmul(b_, a_);
  if (scaling_ != 1.0) d *= scaling_;
  return d;
}

BaseWeight::BaseWeight(Matrix frozen, Matrix origin)
    : frozen_(std::move(frozen)), origin_(std::move(origin)) {
  if (!frozen_.same_shape(origin_)) {
    throw DimensionError("BaseWeight: frozen " + frozen_.shape_string() + " vs origin " +
                         origin_.shape_string());
  }
}

double lora_scaling(double alpha, std::size_t rank) {
  if (rank == 0) throw RankError("lora_scaling: rank must be positive");
  return alpha / static_cast<double>(rank);
}

LoraAdapter adapter_from_slices(const Matrix& q, const Matrix& r, std::size_t rank,
                                double scaling) {
  if (q.cols() != r.rows()) {
    throw DimensionError("adapter_from_slices: Q " + q.shape_string() + " and R " +
                         r.shape_string() + " do not conform");
  }
  Matrix a = slice_rows(r, rank);
  if (scaling != 1.0) a *= 1.0 / scaling;
  return LoraAdapter(slice_cols(q, rank), std::move(a), scaling);
}

OrthogonalInit qr_orthogonal_init(const Matrix& theta0, std::size_t client_rank,
                                  std::size_t base_rank, double scaling) {
  return qr_orthogonal_init(theta0, thin_qr(theta0), client_rank, base_rank, scaling);
}

OrthogonalInit qr_orthogonal_init(const Matrix& theta0, const QrFactors& qr,
                                  std::size_t client_rank, std::size_t base_rank,
                                  double scaling) {
  const std::size_t max_rank = std::min(theta0.rows(), theta0.cols());
  if (client_rank == 0 || client_rank > base_rank || base_rank > max_rank) {
    throw RankError("qr_orthogonal_init: need 1 <= client_rank (" +
                    std::to_string(client_rank) + ") <= base_rank (" +
                    std::to_string(base_rank) + ") <= " + std::to_string(max_rank));
  }
  if (qr.q.rows() != theta0.rows() || qr.r.cols() != theta0.cols()) {
    throw DimensionError("qr_orthogonal_init: factorization does not match theta0");
  }
  Matrix frozen = theta0 - matmul(slice_cols(qr.q, base_rank), slice_rows(qr.r, base_rank));
  return {BaseWeight(std::move(frozen), theta0),
          adapter_from_slices(qr.q, qr.r, client_rank, scaling)};
}

Matrix effective_weight(const BaseWeight& base, const LoraAdapter& adapter) {
  if (adapter.out_dim() != base.frozen().rows() || adapter.in_dim() != base.frozen().cols()) {
    throw DimensionError("effective_weight: adapter " + std::to_string(adapter.out_dim()) +
                         "x" + std::to_string(adapter.in_dim()) + " vs base " +
                         base.frozen().shape_string());
  }
  return base.frozen() + adapter.delta();
}

FactorGradients factor_gradients(const LoraAdapter& adapter, const Matrix& weight_grad) {
  if (weight_grad.rows() != adapter.out_dim() || weight_grad.cols() != adapter.in_dim()) {
    throw DimensionError("factor_gradients: weight gradient " + weight_grad.shape_string() +
                         " vs adapter " + std::to_string(adapter.out_dim()) + "x" +
                         std::to_string(adapter.in_dim()));
  }
  Matrix grad_b = matmul_nt(weight_grad, adapter.a());
  Matrix grad_a = matmul_tn(adapter.b(), weight_grad);
  if (adapter.scaling() != 1.0) {
    grad_b *= adapter.scaling();
    grad_a *= adapter.scaling();
  }
  return {std::move(grad_b), std::move(grad_a)};
}

}  // namespace ilora
