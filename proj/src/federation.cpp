#include "ilora/federation.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <stdexcept>

#include "ilora/random.hpp"

namespace ilora {

namespace {

constexpr std::uint64_t kBytesPerValue = 8;

std::uint64_t bytes_of(const Matrix& m) { return kBytesPerValue * m.size(); }

std::uint64_t payload_bytes(const Broadcast& b) {
  std::uint64_t n = bytes_of(b.left) + bytes_of(b.right);
  if (b.global_c) n += bytes_of(b.global_c->c_a) + bytes_of(b.global_c->c_b);
  return n;
}

LoraAdapter receive(const Broadcast& b, std::size_t rank, double scaling) {
  if (b.refactor) {
    const QrFactors qr = thin_qr(matmul(b.left, b.right));
    return adapter_from_slices(qr.q, qr.r, rank, scaling);
  }
  return adapter_from_slices(b.left, b.right, rank, scaling);
}

void apply_broadcast(ClientState& client, const Broadcast& b) {
  client.adapter = receive(b, client.rank(), client.adapter.scaling());
  client.bias = b.bias;
  if (b.global_c) client.global_c = slice_controls(*b.global_c, client.rank());
  client.synced_round = b.round;
}

// One mini-batch step on A, B and the bias. Returns the raw factor gradients.
FactorGradients train_step(ClientState& c, const FeatureMap& features, const Batch& batch,
                           bool corrected) {
  LossAndGrad lg = loss_at(effective_weight(c.base, c.adapter), c.bias, features, batch);
  FactorGradients fg = factor_gradients(c.adapter, lg.weight_grad);
  Matrix a = c.adapter.a();
  Matrix b = c.adapter.b();
  if (corrected) {
    adamw_update(a, corrected_gradient(fg.grad_a, c.global_c.c_a, c.local_c.c_a), c.opt_a);
    adamw_update(b, corrected_gradient(fg.grad_b, c.global_c.c_b, c.local_c.c_b), c.opt_b);
  } else {
    adamw_update(a, fg.grad_a, c.opt_a);
    adamw_update(b, fg.grad_b, c.opt_b);
  }
  if (!a.all_finite() || !b.all_finite()) throw NonFiniteError("adapter diverged");
  c.adapter.set_factors(std::move(b), std::move(a));
  adamw_update(c.bias, lg.bias_grad, c.opt_bias);
  return fg;
}

struct ClientOutcome {
  std::optional<ClientUpdate> update;
  std::optional<Matrix> effective;
  std::optional<Matrix> start_grad;
  std::size_t steps = 0;
  std::exception_ptr error;
};

ClientOutcome train_client(ClientState& c, const Federation& fed, std::size_t round) {
  const FederationConfig& cfg = fed.config;
  const Dataset& train = *fed.train;
  const bool with_controls = cfg.method == Method::kIloraS;
  Rng rng = make_rng({cfg.training_seed, 0xc11e47ULL, c.client_id, round});

  ClientOutcome out;
  out.start_grad = loss_at(effective_weight(c.base, c.adapter), c.bias, fed.features,
                           gather(train, c.shard))
                       .weight_grad;

  const std::size_t d = c.adapter.out_dim();
  const std::size_t k = c.adapter.in_dim();
  ControlVariates delta_total = ControlVariates::zeros(d, k, c.rank());
  std::vector<std::size_t> order = c.shard;
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    Matrix sum_a(c.rank(), k);
    Matrix sum_b(d, c.rank());
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      const Batch batch = gather(train, std::span(order).subspan(start, len));
      const FactorGradients raw = train_step(c, fed.features, batch, with_controls);
      if (with_controls) {
        sum_a += raw.grad_a;
        sum_b += raw.grad_b;
      }
      ++batches;
      ++out.steps;
    }
    if (with_controls) {
      const double inv = 1.0 / static_cast<double>(batches);
      sum_a *= inv;
      sum_b *= inv;
      ControlUpdate ua = local_control_update(sum_a, c.local_c.c_a);
      ControlUpdate ub = local_control_update(sum_b, c.local_c.c_b);
      delta_total.c_a += ua.delta;
      delta_total.c_b += ub.delta;
      c.local_c = {std::move(ua.new_local), std::move(ub.new_local)};
    }
  }

  out.effective = effective_weight(c.base, c.adapter);
  std::optional<ControlVariates> deltas;
  if (with_controls) deltas = std::move(delta_total);
  out.update = ClientUpdate{c.client_id, c.adapter, c.shard.size(), std::move(deltas)};
  return out;
}

ClientState make_client(std::size_t id, std::size_t rank, std::vector<std::size_t> shard,
                        const Matrix& theta0, const QrFactors& qr0, const FederationConfig& cfg) {
  OrthogonalInit init =
      qr_orthogonal_init(theta0, qr0, rank, cfg.server_rank, lora_scaling(cfg.lora_alpha, rank));
  const std::size_t d = theta0.rows();
  const std::size_t k = theta0.cols();
  return ClientState{id,
                     std::move(shard),
                     std::move(init.base),
                     std::move(init.adapter),
                     Matrix(1, d),
                     AdamWState::fresh(rank, k, cfg.optimizer),
                     AdamWState::fresh(d, rank, cfg.optimizer),
                     AdamWState::fresh(1, d, cfg.optimizer),
                     ControlVariates::zeros(d, k, rank),
                     ControlVariates::zeros(d, k, rank),
                     0};
}

}  // namespace

std::string_view method_name(Method m) noexcept {
  switch (m) {
    case Method::kIlora: return "ilora";
    case Method::kIloraS: return "ilora_s";
    case Method::kFeditAvg: return "fedit_avg";
    case Method::kZeroPad: return "zero_pad";
    case Method::kFullStack: return "full_stack";
  }
  return "unknown";
}

std::optional<Method> parse_method(std::string_view name) noexcept {
  for (Method m : {Method::kIlora, Method::kIloraS, Method::kFeditAvg, Method::kZeroPad,
                   Method::kFullStack}) {
    if (method_name(m) == name) return m;
  }
  return std::nullopt;
}

std::size_t FederationConfig::sampled_per_round() const {
  // tolerance absorbs products like 0.29 * 100 = 28.999999999999996
  return static_cast<std::size_t>(
      std::floor(participation * static_cast<double>(n_clients) + 1e-9));
}

void FederationConfig::validate(std::size_t d, std::size_t k) const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument(msg); };
  if (n_clients == 0) fail("n_clients must be >= 1");
  if (!(participation > 0.0 && participation <= 1.0)) fail("participation must be in (0, 1]");
  if (sampled_per_round() == 0) fail("floor(participation * n_clients) must be >= 1");
  if (local_epochs == 0) fail("local_epochs must be >= 1");
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (rounds == 0) fail("rounds must be >= 1");
  if (client_ranks.empty()) fail("client_ranks must not be empty");
  const std::size_t max_rank = std::min(d, k);
  if (server_rank == 0 || server_rank > max_rank) {
    fail("server_rank " + std::to_string(server_rank) + " outside [1, " +
         std::to_string(max_rank) + "]");
  }
  for (std::size_t r : client_ranks) {
    if (r == 0) fail("client ranks must be >= 1");
    if (r > server_rank) {
      fail("client rank " + std::to_string(r) + " exceeds server_rank " +
           std::to_string(server_rank));
    }
  }
  if (method == Method::kFeditAvg) {
    for (std::size_t i = 0; i < n_clients; ++i) {
      if (rank_of(i) != rank_of(0)) fail("fedit_avg requires equal client ranks");
    }
  }
  if (!(lora_alpha > 0.0)) fail("lora_alpha must be > 0");
  if (!(global_scale >= 0.0)) fail("global_scale must be >= 0");
  if (!(dirichlet_alpha > 0.0)) fail("dirichlet_alpha must be > 0");
  if (!(optimizer.lr >= 0.0)) fail("lr must be >= 0");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0)) fail("beta1 must be in [0, 1)");
  if (!(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) fail("beta2 must be in [0, 1)");
  if (!(optimizer.eps > 0.0)) fail("eps must be > 0");
  if (!(optimizer.weight_decay >= 0.0)) fail("weight_decay must be >= 0");
}

RoundAborted::RoundAborted(std::size_t round, std::size_t client, const std::string& what)
    : NonFiniteError("round " + std::to_string(round) + " aborted at client " +
                     std::to_string(client) + ": " + what),
      round_(round),
      client_(client) {}

std::size_t payload_rank(Method method, std::size_t server_rank,
                         const std::vector<std::size_t>& sampled_ranks) {
  switch (method) {
    case Method::kIlora:
    case Method::kIloraS: return server_rank;
    case Method::kFeditAvg: return sampled_ranks.empty() ? 0 : sampled_ranks.front();
    case Method::kZeroPad:
      return sampled_ranks.empty() ? 0 : *std::max_element(sampled_ranks.begin(), sampled_ranks.end());
    case Method::kFullStack:
      return std::accumulate(sampled_ranks.begin(), sampled_ranks.end(), std::size_t{0});
  }
  return 0;
}

CommBytes account_communication(const RoundContext& ctx) {
  const std::uint64_t width = ctx.d + ctx.k;
  const std::uint64_t sampled = ctx.sampled_ranks.size();
  const bool controls = ctx.method == Method::kIloraS;
  const std::uint64_t control_values = controls ? ctx.server_rank * width : 0;

  const std::uint64_t per_client_down =
      payload_rank(ctx.method, ctx.server_rank, ctx.sampled_ranks) * width + control_values;
  const std::uint64_t per_refresh = ctx.refresh_payload_rank * width + control_values;

  std::uint64_t up = 0;
  for (std::size_t r : ctx.sampled_ranks) up += r * width * (controls ? 2 : 1);

  return {kBytesPerValue * (sampled * per_client_down + ctx.refreshed * per_refresh),
          kBytesPerValue * up};
}

Pretrained make_pretrained(const ModelSetup& setup, std::size_t input_dim,
                           std::size_t n_classes) {
  Rng rng = make_rng({setup.seed, 0x7e7a0ULL});
  if (setup.architecture == Architecture::kLinear) {
    return {gaussian_matrix(n_classes, input_dim, rng, setup.init_scale),
            FeatureMap::linear(input_dim)};
  }
  Matrix hidden =
      gaussian_matrix(setup.hidden_units, input_dim, rng, 1.0 / std::sqrt(double(input_dim)));
  Matrix theta0 = gaussian_matrix(n_classes, setup.hidden_units, rng, setup.init_scale);
  return {std::move(theta0), FeatureMap::one_hidden(std::move(hidden))};
}

Federation init_federation(const FederationConfig& config, std::shared_ptr<const Dataset> train,
                           std::shared_ptr<const Dataset> heldout) {
  const PartitionPlan plan =
      dirichlet_partition(*train, config.n_clients, config.dirichlet_alpha, config.partition_seed);
  return init_federation(config, std::move(train), std::move(heldout), plan.shards());
}

Federation init_federation(const FederationConfig& config, std::shared_ptr<const Dataset> train,
                           std::shared_ptr<const Dataset> heldout,
                           std::vector<std::vector<std::size_t>> shards) {
  if (!train || !heldout) throw std::invalid_argument("init_federation: missing dataset");
  if (shards.size() != config.n_clients) {
    throw std::invalid_argument("init_federation: " + std::to_string(shards.size()) +
                                " shards for " + std::to_string(config.n_clients) + " clients");
  }
  for (const auto& s : shards) {
    if (s.empty()) throw std::invalid_argument("init_federation: empty client shard");
    for (std::size_t i : s) {
      if (i >= train->size()) throw std::out_of_range("init_federation: shard index out of range");
    }
  }
  Pretrained pre = make_pretrained(config.model, train->input_dim(), train->n_classes);
  const std::size_t d = pre.theta0.rows();
  const std::size_t k = pre.theta0.cols();
  config.validate(d, k);

  const QrFactors qr0 = thin_qr(pre.theta0);
  Matrix b0 = slice_cols(qr0.q, config.server_rank);
  Matrix a0 = slice_rows(qr0.r, config.server_rank);
  Matrix leading = matmul(b0, a0);
  Matrix anchor = pre.theta0 - leading;

  ServerState server{pre.theta0,
                     anchor,
                     anchor + leading,
                     Matrix(1, d),
                     std::nullopt,
                     ControlVariates::zeros(d, k, config.server_rank),
                     0,
                     Broadcast{0, std::move(b0), std::move(a0), false, std::nullopt, Matrix(1, d)}};
  if (config.method == Method::kIloraS) server.broadcast.global_c = server.global_c;

  std::vector<ClientState> clients;
  clients.reserve(config.n_clients);
  for (std::size_t id = 0; id < config.n_clients; ++id) {
    clients.push_back(
        make_client(id, config.rank_of(id), std::move(shards[id]), pre.theta0, qr0, config));
  }
  return Federation{config,           std::move(pre.features), std::move(train),
                    std::move(heldout), std::move(server),     std::move(clients)};
}

RoundMetrics run_round(Federation& fed, const ExecutionPolicy& policy) {
  const FederationConfig& cfg = fed.config;
  ServerState& server = fed.server;
  const std::size_t round = server.round + 1;
  if (round > cfg.rounds) throw std::logic_error("run_round: all rounds already executed");

  Rng sampler = make_rng({cfg.training_seed, 0x5a3b1eULL, round});
  std::vector<std::size_t> sampled(cfg.n_clients);
  std::iota(sampled.begin(), sampled.end(), std::size_t{0});
  std::shuffle(sampled.begin(), sampled.end(), sampler);
  sampled.resize(cfg.sampled_per_round());
  std::sort(sampled.begin(), sampled.end());

  const std::size_t d = server.anchor.rows();
  const std::size_t k = server.anchor.cols();
  RoundContext ctx{cfg.method, d, k, cfg.server_rank, {}, 0, server.broadcast.left.cols()};
  std::uint64_t measured_down = 0;
  std::uint64_t measured_up = 0;

  // clients skipped in earlier rounds pick up the latest payload first
  for (std::size_t id : sampled) {
    ClientState& c = fed.clients[id];
    ctx.sampled_ranks.push_back(c.rank());
    if (c.synced_round != server.broadcast.round) {
      apply_broadcast(c, server.broadcast);
      measured_down += payload_bytes(server.broadcast);
      ++ctx.refreshed;
    }
  }

  std::vector<ClientOutcome> outcomes(sampled.size());
  std::vector<std::size_t> order(sampled.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (!policy.parallel && policy.order_seed) {
    Rng shuffler = make_rng({*policy.order_seed, round});
    std::shuffle(order.begin(), order.end(), shuffler);
  }
  const auto n_sampled = static_cast<std::ptrdiff_t>(sampled.size());
#pragma omp parallel for schedule(dynamic, 1) if (policy.parallel)
  for (std::ptrdiff_t pos = 0; pos < n_sampled; ++pos) {
    const std::size_t slot = order[static_cast<std::size_t>(pos)];
    try {
      outcomes[slot] = train_client(fed.clients[sampled[slot]], fed, round);
    } catch (...) {
      outcomes[slot].error = std::current_exception();
    }
  }
  for (std::size_t i = 0; i < sampled.size(); ++i) {
    if (!outcomes[i].error) continue;
    try {
      std::rethrow_exception(outcomes[i].error);
    } catch (const NonFiniteError& e) {
      throw RoundAborted(round, sampled[i], e.what());
    }
  }

  std::vector<ClientUpdate> updates;
  updates.reserve(sampled.size());
  std::size_t steps = 0;
  for (auto& o : outcomes) {
    measured_up += bytes_of(o.update->adapter.b()) + bytes_of(o.update->adapter.a());
    if (o.update->control_deltas) {
      measured_up += bytes_of(o.update->control_deltas->c_a) +
                     bytes_of(o.update->control_deltas->c_b);
    }
    steps += o.steps;
    updates.push_back(*o.update);
  }
  const std::vector<double> p = sample_weights(updates);

  Matrix mean_grad(d, k);
  for (std::size_t i = 0; i < outcomes.size(); ++i) mean_grad += p[i] * *outcomes[i].start_grad;
  double heterogeneity = 0.0;
  for (const auto& o : outcomes) heterogeneity += frobenius_norm(*o.start_grad - mean_grad);
  heterogeneity /= static_cast<double>(outcomes.size());

  const Matrix exact = concat_reconstruct(updates);
  Broadcast next{round, Matrix(1, 1), Matrix(1, 1), false, std::nullopt, Matrix(1, d)};
  double truncation = 0.0;
  switch (cfg.method) {
    case Method::kIlora:
    case Method::kIloraS: {
      AggregationResult res = qr_compress(exact, cfg.server_rank);
      truncation = res.truncation_error;
      server.global_weight = apply_global(server.anchor, res, cfg.global_scale);
      next.left = res.server_adapter.b();
      next.right = res.server_adapter.a();
      server.last_aggregation = std::move(res);
      if (cfg.method == Method::kIloraS) {
        std::vector<Matrix> da;
        std::vector<Matrix> db;
        for (const auto& u : updates) {
          ControlVariates padded = pad_controls(*u.control_deltas, cfg.server_rank);
          da.push_back(std::move(padded.c_a));
          db.push_back(std::move(padded.c_b));
        }
        server.global_c = {server_control_aggregate(server.global_c.c_a, da),
                           server_control_aggregate(server.global_c.c_b, db)};
        next.global_c = server.global_c;
      }
      break;
    }
    case Method::kFeditAvg:
    case Method::kZeroPad: {
      AveragedFactors f = cfg.method == Method::kFeditAvg
                              ? average_factors(updates)
                              : zero_pad_factors(updates, payload_rank(cfg.method, cfg.server_rank,
                                                                       ctx.sampled_ranks));
      const Matrix applied = matmul(f.b, f.a);
      truncation = frobenius_norm(exact - applied);
      server.global_weight = server.anchor + cfg.global_scale * applied;
      next.left = std::move(f.b);
      next.right = std::move(f.a);
      break;
    }
    case Method::kFullStack: {
      StackedFactors s = baseline_full_stack(updates);
      const Matrix applied = matmul(s.b_stack, s.a_stack);
      truncation = frobenius_norm(exact - applied);
      server.global_weight = server.anchor + cfg.global_scale * applied;
      next.left = std::move(s.b_stack);
      next.right = std::move(s.a_stack);
      next.refactor = true;
      break;
    }
  }

  Matrix bias(1, d);
  for (std::size_t i = 0; i < updates.size(); ++i) {
    bias += p[i] * fed.clients[sampled[i]].bias;
  }
  server.global_bias = bias;
  next.bias = std::move(bias);

  double drift = 0.0;
  for (const auto& o : outcomes) drift += frobenius_norm(*o.effective - server.global_weight);
  drift /= static_cast<double>(outcomes.size());

  for (std::size_t id : sampled) {
    apply_broadcast(fed.clients[id], next);
    measured_down += payload_bytes(next);
  }
  server.broadcast = std::move(next);
  server.round = round;

  const CommBytes analytic = account_communication(ctx);
  if (analytic.down != measured_down || analytic.up != measured_up) {
    throw std::logic_error("run_round: measured traffic disagrees with the communication model");
  }

  const Batch train_batch = as_batch(*fed.train);
  const Batch heldout_batch = as_batch(*fed.heldout);
  RoundMetrics m;
  m.round = round;
  m.train_loss = loss_at(server.global_weight, server.global_bias, fed.features, train_batch).loss;
  m.train_accuracy = accuracy_at(server.global_weight, server.global_bias, fed.features, train_batch);
  m.heldout_accuracy =
      accuracy_at(server.global_weight, server.global_bias, fed.features, heldout_batch);
  m.truncation_error = truncation;
  m.drift = drift;
  m.grad_heterogeneity = heterogeneity;
  m.bytes_down = measured_down;
  m.bytes_up = measured_up;
  m.sampled = sampled.size();
  m.local_steps = steps;
  return m;
}

std::vector<RoundMetrics> run_federation(const FederationConfig& config,
                                         std::shared_ptr<const Dataset> train,
                                         std::shared_ptr<const Dataset> heldout,
                                         const ExecutionPolicy& policy) {
  Federation fed = init_federation(config, std::move(train), std::move(heldout));
  std::vector<RoundMetrics> out;
  out.reserve(config.rounds);
  for (std::size_t t = 0; t < config.rounds; ++t) out.push_back(run_round(fed, policy));
  return out;
}

GlobalModel global_model(const Federation& fed) {
  return {fed.server.global_weight, fed.server.global_bias};
}

CentralizedResult train_centralized(const FederationConfig& config, const Dataset& train,
                                    const Dataset& heldout, std::size_t total_steps) {
  Pretrained pre = make_pretrained(config.model, train.input_dim(), train.n_classes);
  config.validate(pre.theta0.rows(), pre.theta0.cols());
  std::vector<std::size_t> all(train.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  ClientState c = make_client(0, config.server_rank, all, pre.theta0, thin_qr(pre.theta0), config);

  Rng rng = make_rng({config.training_seed, 0xce47a1ULL});
  std::vector<std::size_t> order = all;
  std::size_t steps = 0;
  while (steps < total_steps) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size() && steps < total_steps;
         start += config.batch_size, ++steps) {
      const std::size_t len = std::min(config.batch_size, order.size() - start);
      train_step(c, pre.features, gather(train, std::span(order).subspan(start, len)), false);
    }
  }
  const Matrix w = effective_weight(c.base, c.adapter);
  return {loss_at(w, c.bias, pre.features, as_batch(train)).loss,
          accuracy_at(w, c.bias, pre.features, as_batch(heldout)), steps};
}

}  // namespace ilora
