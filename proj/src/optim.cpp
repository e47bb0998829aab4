#include "ilora/optim.hpp"

#include <cmath>
#include <string>

namespace ilora {

AdamWState AdamWState::fresh(std::size_t rows, std::size_t cols, const AdamWHyper& hyper) {
  return {Matrix(rows, cols), Matrix(rows, cols), 0, hyper};
}

void adamw_update(Matrix& param, const Matrix& grad, AdamWState& state) {
  if (!param.same_shape(grad) || !param.same_shape(state.m) || !param.same_shape(state.v)) {
    throw DimensionError("adamw: param " + param.shape_string() + ", grad " +
                         grad.shape_string() + ", moments " + state.m.shape_string());
  }
  if (!grad.all_finite()) {
    throw NonFiniteError("adamw: nonfinite gradient at step " + std::to_string(state.step + 1));
  }
  const AdamWHyper& h = state.hyper;
  const std::size_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));

  auto p = param.data();
  const auto g = grad.data();
  auto m = state.m.data();
  auto v = state.v.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
    v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    p[i] -= h.lr * (m_hat / (std::sqrt(v_hat) + h.eps) + h.weight_decay * p[i]);
  }
  state.step = t;
}

std::pair<Matrix, AdamWState> adamw_step(const Matrix& param, const Matrix& grad,
                                         const AdamWState& state) {
  std::pair<Matrix, AdamWState> out{param, state};
  adamw_update(out.first, grad, out.second);
  return out;
}

ControlVariates ControlVariates::zeros(std::size_t d, std::size_t k, std::size_t rank) {
  return {Matrix(rank, k), Matrix(d, rank)};
}

Matrix corrected_gradient(const Matrix& raw, const Matrix& global_c, const Matrix& local_c) {
  if (!raw.same_shape(global_c) || !raw.same_shape(local_c)) {
    throw DimensionError("corrected_gradient: raw " + raw.shape_string() + ", global " +
                         global_c.shape_string() + ", local " + local_c.shape_string());
  }
  Matrix out = raw;
  auto o = out.data();
  const auto gc = global_c.data();
  const auto lc = local_c.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = o[i] + gc[i] - lc[i];
  return out;
}

ControlUpdate local_control_update(const Matrix& last_raw_grad, const Matrix& local_c) {
  return {last_raw_grad - local_c, last_raw_grad};
}

Matrix server_control_aggregate(const Matrix& global_c, std::span<const Matrix> deltas) {
  if (deltas.empty()) throw std::invalid_argument("server_control_aggregate: no deltas");
  Matrix sum(global_c.rows(), global_c.cols());
  for (const Matrix& d : deltas) sum += d;
  sum *= 1.0 / static_cast<double>(deltas.size());
  return global_c + sum;
}

ControlVariates slice_controls(const ControlVariates& cv, std::size_t rank) {
  if (rank == 0 || rank > cv.rank()) {
    throw RankError("slice_controls: rank " + std::to_string(rank) + " outside [1, " +
                    std::to_string(cv.rank()) + "]");
  }
  return {slice_rows(cv.c_a, rank), slice_cols(cv.c_b, rank)};
}

ControlVariates pad_controls(const ControlVariates& cv, std::size_t target_rank) {
  if (target_rank < cv.rank()) {
    throw RankError("pad_controls: target rank " + std::to_string(target_rank) +
                    " below current rank " + std::to_string(cv.rank()));
  }
  return {zero_pad(cv.c_a, target_rank, cv.c_a.cols()),
          zero_pad(cv.c_b, cv.c_b.rows(), target_rank)};
}

}  // namespace ilora
