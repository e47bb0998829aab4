#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "ilora/lora.hpp"
#include "ilora/matrix.hpp"
#include "ilora/optim.hpp"

namespace ilora {

/// Raised by factor-averaging baselines that cannot mix client ranks.
class RankIncompatibleError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// What a client uploads after local training.
struct ClientUpdate {
  std::size_t client_id = 0;
  LoraAdapter adapter;
  std::size_t sample_count = 1;
  std::optional<ControlVariates> control_deltas;
};

struct AggregationResult {
  Matrix q;  // thin QR of delta_exact
  Matrix r;
  LoraAdapter server_adapter;  // (Q[:, :r_s], R[:r_s, :]), scaling 1
  double truncation_error = 0.0;  // ‖R[r_s:, :]‖_F
  Matrix delta_exact;             // Σ p_k s_k B_k A_k before compression

  std::size_t server_rank() const noexcept { return server_adapter.rank(); }
};

/// p_k = n_k / Σ n_j, in ascending client_id order.
std::vector<double> sample_weights(std::span<const ClientUpdate> updates);

/// Concatenated factors B_c = [B_1 … B_S], A_c = [p_1 s_1 A_1; …; p_S s_S A_S],
/// clients in ascending id order. B_c · A_c = Σ p_k s_k B_k A_k.
struct StackedFactors {
  Matrix b_stack;
  Matrix a_stack;
};

StackedFactors stack_factors(std::span<const ClientUpdate> updates);

/// Δθ = B_c · A_c.
Matrix concat_reconstruct(std::span<const ClientUpdate> updates);

/// Thin QR of delta truncated to `server_rank`. Checks internally that
/// ‖delta − B_s A_s‖_F matches the reported truncation error.
AggregationResult qr_compress(const Matrix& delta, std::size_t server_rank);

/// Leading `client_rank` slices of the aggregated factorization, stored so
/// that scaling·B·A == Q[:, :r_k] R[:r_k, :].
LoraAdapter personalize(const AggregationResult& result, std::size_t client_rank,
                        double scaling = 1.0);

/// anchor + global_scale · B_s A_s
Matrix apply_global(const Matrix& anchor, const AggregationResult& result, double global_scale);

/// Factor averages B̄ = Σ p_k B_k and Ā = Σ p_k s_k A_k at a common rank.
struct AveragedFactors {
  Matrix b;
  Matrix a;
};

/// FedIT-style averaging. All ranks must agree.
AveragedFactors average_factors(std::span<const ClientUpdate> updates);
/// B̄ · Ā
Matrix baseline_factor_average(std::span<const ClientUpdate> updates);

/// Zero-pads every client to `target_rank`, then averages factors.
AveragedFactors zero_pad_factors(std::span<const ClientUpdate> updates,
                                 std::size_t target_rank);
Matrix baseline_zero_pad(std::span<const ClientUpdate> updates, std::size_t target_rank);

/// The unreduced rank-Σr_k concatenation (same factors as stack_factors).
StackedFactors baseline_full_stack(std::span<const ClientUpdate> updates);

}  // namespace ilora
