#include <json.hpp>

#include "ilora/experiments.hpp"

namespace ilora {

Datasets make_datasets(const DataSpec& data) {
  // held-out samples come from an independent stream of the same clusters
  constexpr std::uint64_t kHeldoutStream = 0x4e1d07ULL << 32;
  auto train = std::make_shared<const Dataset>(generate_blobs(
      data.n_classes, data.samples_per_class, data.input_dim, data.spread, data.seed));
  auto heldout = std::make_shared<const Dataset>(
      generate_blobs(data.n_classes, data.heldout_per_class, data.input_dim, data.spread,
                     data.seed ^ kHeldoutStream));
  return {std::move(train), std::move(heldout)};
}

std::string metrics_line(const RoundMetrics& m) {
  nlohmann::ordered_json j;
  j["round"] = m.round;
  j["train_loss"] = m.train_loss;
  j["train_accuracy"] = m.train_accuracy;
  j["heldout_accuracy"] = m.heldout_accuracy;
  j["truncation_error"] = m.truncation_error;
  j["drift"] = m.drift;
  j["grad_heterogeneity"] = m.grad_heterogeneity;
  j["bytes_down"] = m.bytes_down;
  j["bytes_up"] = m.bytes_up;
  j["sampled"] = m.sampled;
  j["local_steps"] = m.local_steps;
  return j.dump();
}

std::vector<double> alphas_of(const ExperimentSpec& spec) {
  if (spec.alpha_grid.empty()) return {spec.federation.dirichlet_alpha};
  return spec.alpha_grid;
}

std::vector<RoundMetrics> run_experiment(const ExperimentSpec& spec,
                                         const ExecutionPolicy& policy,
                                         const RoundCallback& on_round) {
  validate_spec(spec);
  const Datasets ds = make_datasets(spec.data);
  Federation fed = init_federation(spec.federation, ds.train, ds.heldout);
  std::vector<RoundMetrics> out;
  out.reserve(spec.federation.rounds);
  for (std::size_t t = 0; t < spec.federation.rounds; ++t) {
    out.push_back(run_round(fed, policy));
    if (on_round) on_round(out.back());
  }
  return out;
}

}  // namespace ilora
