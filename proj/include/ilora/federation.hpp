#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ilora/aggregation.hpp"
#include "ilora/data.hpp"
#include "ilora/lora.hpp"
#include "ilora/model.hpp"
#include "ilora/optim.hpp"

namespace ilora {

enum class Method { kIlora, kIloraS, kFeditAvg, kZeroPad, kFullStack };

std::string_view method_name(Method m) noexcept;
std::optional<Method> parse_method(std::string_view name) noexcept;
inline bool uses_qr_aggregation(Method m) noexcept {
  return m == Method::kIlora || m == Method::kIloraS;
}

/// Pre-trained weight θ₀ and the frozen feature transform in front of it.
struct ModelSetup {
  Architecture architecture = Architecture::kLinear;
  std::size_t hidden_units = 32;
  double init_scale = 0.1;
  std::uint64_t seed = 4;
};

struct FederationConfig {
  std::size_t n_clients = 4;
  double participation = 1.0;
  std::size_t local_epochs = 1;
  std::size_t batch_size = 64;
  std::size_t rounds = 5;
  /// Client k gets client_ranks[k % size].
  std::vector<std::size_t> client_ranks{4};
  std::size_t server_rank = 4;
  Method method = Method::kIlora;
  AdamWHyper optimizer;
  /// LoRA scaling of a rank-r adapter is lora_alpha / r.
  double lora_alpha = 16.0;
  double global_scale = 1.0;
  double dirichlet_alpha = 0.5;
  std::uint64_t partition_seed = 2;
  std::uint64_t training_seed = 3;
  ModelSetup model;

  std::size_t rank_of(std::size_t client) const { return client_ranks[client % client_ranks.size()]; }
  std::size_t sampled_per_round() const;
  /// Throws std::invalid_argument naming the first violated invariant.
  void validate(std::size_t d, std::size_t k) const;
};

struct ClientState {
  std::size_t client_id = 0;
  std::vector<std::size_t> shard;
  BaseWeight base;
  LoraAdapter adapter;
  Matrix bias;
  AdamWState opt_a;
  AdamWState opt_b;
  AdamWState opt_bias;
  ControlVariates local_c;   // rank r_k
  ControlVariates global_c;  // latest received global controls, sliced to r_k
  std::size_t synced_round = 0;

  std::size_t rank() const noexcept { return adapter.rank(); }
};

/// Payload the server sends after a round. `left · right` is the update in
/// weight units; a client keeps leading slices of it. With `refactor` set the
/// client first re-factors the product with thin QR (full-stack baseline).
struct Broadcast {
  std::size_t round = 0;
  Matrix left;
  Matrix right;
  bool refactor = false;
  std::optional<ControlVariates> global_c;
  Matrix bias;
};

struct ServerState {
  Matrix theta0;
  /// Shared frozen base θ₀ − Q₀[:, :r_s] R₀[:r_s, :]; the global model is anchor + update.
  Matrix anchor;
  Matrix global_weight;
  Matrix global_bias;
  std::optional<AggregationResult> last_aggregation;
  ControlVariates global_c;  // rank r_s
  std::size_t round = 0;
  Broadcast broadcast;
};

struct RoundMetrics {
  std::size_t round = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double heldout_accuracy = 0.0;
  /// ‖R₂₂‖_F for QR methods; for baselines ‖Σ p_k s_k B_k A_k − applied update‖_F.
  double truncation_error = 0.0;
  /// Mean over sampled clients of ‖θ_k^eff − θ^(t)‖_F after local training.
  double drift = 0.0;
  /// Mean over sampled clients of ‖g_k − ḡ‖_F at round start (full-shard weight gradients).
  double grad_heterogeneity = 0.0;
  std::uint64_t bytes_down = 0;
  std::uint64_t bytes_up = 0;
  std::size_t sampled = 0;
  std::size_t local_steps = 0;
};

/// Inputs to the analytic communication model for one round.
struct RoundContext {
  Method method = Method::kIlora;
  std::size_t d = 0;
  std::size_t k = 0;
  std::size_t server_rank = 0;
  std::vector<std::size_t> sampled_ranks;
  /// Clients that were stale at round start and received the previous payload.
  std::size_t refreshed = 0;
  std::size_t refresh_payload_rank = 0;
};

struct CommBytes {
  std::uint64_t down = 0;
  std::uint64_t up = 0;
};

/// Rank of the factor pair the server sends for `method` in a round whose
/// sampled clients have `sampled_ranks`.
std::size_t payload_rank(Method method, std::size_t server_rank,
                         const std::vector<std::size_t>& sampled_ranks);

/// Closed-form bytes (8 per double):
///   down = S · payload_rank · (d+k)  [+ S · r_s(d+k) controls for ilora_s]  + refreshes
///   up   = Σ r_k (d+k)               [× 2 with control deltas for ilora_s]
CommBytes account_communication(const RoundContext& ctx);

struct ExecutionPolicy {
  bool parallel = true;
  /// Serial mode only: run clients in a shuffled order drawn from this seed.
  std::optional<std::uint64_t> order_seed;
};

/// Aborted round (nonfinite loss or gradient) with the offending client.
class RoundAborted : public NonFiniteError {
 public:
  RoundAborted(std::size_t round, std::size_t client, const std::string& what);
  std::size_t round() const noexcept { return round_; }
  std::size_t client() const noexcept { return client_; }

 private:
  std::size_t round_;
  std::size_t client_;
};

struct Pretrained {
  Matrix theta0;  // n_classes × feature_dim
  FeatureMap features;
};

Pretrained make_pretrained(const ModelSetup& setup, std::size_t input_dim, std::size_t n_classes);

struct Federation {
  FederationConfig config;
  FeatureMap features;
  std::shared_ptr<const Dataset> train;
  std::shared_ptr<const Dataset> heldout;
  ServerState server;
  std::vector<ClientState> clients;
};

/// Partitions `train` with Dir(config.dirichlet_alpha) and initializes every
/// client from the QR factorization of θ₀ (computed once on the server).
Federation init_federation(const FederationConfig& config, std::shared_ptr<const Dataset> train,
                           std::shared_ptr<const Dataset> heldout);

/// As above with explicit shards (one per client).
Federation init_federation(const FederationConfig& config, std::shared_ptr<const Dataset> train,
                           std::shared_ptr<const Dataset> heldout,
                           std::vector<std::vector<std::size_t>> shards);

/// One round of sampling, local training, aggregation and broadcast.
RoundMetrics run_round(Federation& fed, const ExecutionPolicy& policy = {});

std::vector<RoundMetrics> run_federation(const FederationConfig& config,
                                         std::shared_ptr<const Dataset> train,
                                         std::shared_ptr<const Dataset> heldout,
                                         const ExecutionPolicy& policy = {});

/// Global model as a (weight, bias) pair.
struct GlobalModel {
  Matrix weight;
  Matrix bias;
};

GlobalModel global_model(const Federation& fed);

/// Single-model training on the pooled dataset for `total_steps` mini-batch
/// steps: one rank-r_s adapter (the global model's rank) with the same
/// initialization, batch size and optimizer as the clients.
struct CentralizedResult {
  double train_loss = 0.0;
  double heldout_accuracy = 0.0;
  std::size_t steps = 0;
};

CentralizedResult train_centralized(const FederationConfig& config, const Dataset& train,
                                    const Dataset& heldout, std::size_t total_steps);

}  // namespace ilora
