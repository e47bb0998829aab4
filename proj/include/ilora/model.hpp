#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "ilora/lora.hpp"
#include "ilora/matrix.hpp"

namespace ilora {

/// n samples of d_in features with their class ids.
struct Batch {
  Matrix inputs;
  std::vector<std::size_t> labels;

  Batch(Matrix inputs, std::vector<std::size_t> labels);
  std::size_t size() const noexcept { return labels.size(); }
};

enum class Architecture { kLinear, kOneHidden };

/// Frozen input transform in front of the adapted matrix: identity for the
/// linear model, tanh(x · Hᵀ) with a fixed random H for the one-hidden model.
class FeatureMap {
 public:
  static FeatureMap linear(std::size_t input_dim);
  static FeatureMap one_hidden(Matrix hidden_weights);

  Architecture architecture() const noexcept { return arch_; }
  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t output_dim() const noexcept;
  const std::optional<Matrix>& hidden_weights() const noexcept { return hidden_; }

  Matrix apply(const Matrix& inputs) const;

 private:
  FeatureMap(Architecture arch, std::size_t input_dim, std::optional<Matrix> hidden)
      : arch_(arch), input_dim_(input_dim), hidden_(std::move(hidden)) {}

  Architecture arch_;
  std::size_t input_dim_;
  std::optional<Matrix> hidden_;
};

/// Softmax classifier whose n_classes × feature_dim weight carries the LoRA
/// adapter. The bias (1 × n_classes) is trained directly.
struct ToyModel {
  BaseWeight base;
  LoraAdapter adapter;
  Matrix bias;
  FeatureMap features;

  std::size_t n_classes() const noexcept { return base.frozen().rows(); }
};

struct LossAndGrad {
  double loss = 0.0;
  Matrix weight_grad;  // ∂loss/∂W, n_classes × feature_dim
  Matrix bias_grad;    // 1 × n_classes
};

/// Mean cross-entropy and gradients at an explicit weight matrix.
LossAndGrad loss_at(const Matrix& weight, const Matrix& bias, const FeatureMap& features,
                    const Batch& batch);

/// Mean cross-entropy at the model's effective weight.
LossAndGrad forward_loss(const ToyModel& model, const Batch& batch);

/// Fraction of samples whose argmax logit (lowest index on ties) equals the label.
double accuracy_at(const Matrix& weight, const Matrix& bias, const FeatureMap& features,
                   const Batch& batch);

double evaluate(const ToyModel& model, const Batch& batch);

}  // namespace ilora
