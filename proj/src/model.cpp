#include "ilora/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ilora {

namespace {

Matrix logits_of(const Matrix& weight, const Matrix& bias, const Matrix& feats) {
  Matrix logits = matmul_nt(feats, weight);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias(0, c);
  }
  return logits;
}

void check_conformance(const Matrix& weight, const Matrix& bias, const FeatureMap& features,
                       const Batch& batch) {
  if (batch.inputs.cols() != features.input_dim()) {
    throw DimensionError("batch has " + std::to_string(batch.inputs.cols()) +
                         " features, model expects " + std::to_string(features.input_dim()));
  }
  if (weight.cols() != features.output_dim()) {
    throw DimensionError("weight " + weight.shape_string() + " does not accept " +
                         std::to_string(features.output_dim()) + " features");
  }
  if (bias.rows() != 1 || bias.cols() != weight.rows()) {
    throw DimensionError("bias " + bias.shape_string() + " does not match weight " +
                         weight.shape_string());
  }
  for (std::size_t y : batch.labels) {
    if (y >= weight.rows()) {
      throw std::out_of_range("label " + std::to_string(y) + " outside [0, " +
                              std::to_string(weight.rows()) + ")");
    }
  }
}

}  // namespace

Batch::Batch(Matrix in, std::vector<std::size_t> ys)
    : inputs(std::move(in)), labels(std::move(ys)) {
  if (labels.empty()) throw DimensionError("Batch: empty batch");
  if (inputs.rows() != labels.size()) {
    throw DimensionError("Batch: " + std::to_string(inputs.rows()) + " rows but " +
                         std::to_string(labels.size()) + " labels");
  }
}

FeatureMap FeatureMap::linear(std::size_t input_dim) {
  if (input_dim == 0) throw DimensionError("FeatureMap: input_dim must be positive");
  return FeatureMap(Architecture::kLinear, input_dim, std::nullopt);
}

FeatureMap FeatureMap::one_hidden(Matrix hidden_weights) {
  const std::size_t in = hidden_weights.cols();
  return FeatureMap(Architecture::kOneHidden, in, std::move(hidden_weights));
}

std::size_t FeatureMap::output_dim() const noexcept {
  return hidden_ ? hidden_->rows() : input_dim_;
}

Matrix FeatureMap::apply(const Matrix& inputs) const {
  if (inputs.cols() != input_dim_) {
    throw DimensionError("FeatureMap: expected " + std::to_string(input_dim_) +
                         " input columns, got " + inputs.shape_string());
  }
  if (!hidden_) return inputs;
  Matrix h = matmul_nt(inputs, *hidden_);
  for (double& x : h.data()) x = std::tanh(x);
  return h;
}

LossAndGrad loss_at(const Matrix& weight, const Matrix& bias, const FeatureMap& features,
                    const Batch& batch) {
  check_conformance(weight, bias, features, batch);
  const Matrix feats = features.apply(batch.inputs);
  Matrix probs = logits_of(weight, bias, feats);
  const std::size_t n = batch.size();
  const double inv_n = 1.0 / static_cast<double>(n);

  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto row = probs.row(i);
    const double peak = *std::max_element(row.begin(), row.end());
    const std::size_t y = batch.labels[i];
    const double shifted_target = row[y] - peak;
    double denom = 0.0;
    for (double& z : row) {
      z = std::exp(z - peak);
      denom += z;
    }
    // log-sum-exp form keeps saturated logits finite
    loss += std::log(denom) - shifted_target;
    for (double& z : row) z /= denom;
    row[y] -= 1.0;
    for (double& z : row) z *= inv_n;
  }
  loss *= inv_n;
  if (!std::isfinite(loss)) throw NonFiniteError("loss_at: nonfinite loss");

  // probs now holds ∂loss/∂logits
  Matrix weight_grad = matmul_tn(probs, feats);
  Matrix bias_grad(1, weight.rows());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < weight.rows(); ++c) bias_grad(0, c) += probs(i, c);
  return {loss, std::move(weight_grad), std::move(bias_grad)};
}

LossAndGrad forward_loss(const ToyModel& model, const Batch& batch) {
  return loss_at(effective_weight(model.base, model.adapter), model.bias, model.features,
                 batch);
}

double accuracy_at(const Matrix& weight, const Matrix& bias, const FeatureMap& features,
                   const Batch& batch) {
  check_conformance(weight, bias, features, batch);
  const Matrix logits = logits_of(weight, bias, features.apply(batch.inputs));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto row = logits.row(i);
    // max_element returns the first maximum, i.e. the lowest class index
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) -
                                               row.begin());
    if (best == batch.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(batch.size());
}

double evaluate(const ToyModel& model, const Batch& batch) {
  return accuracy_at(effective_weight(model.base, model.adapter), model.bias, model.features,
                     batch);
}

}  // namespace ilora
