#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ilora/data.hpp"
#include "ilora/federation.hpp"

namespace ilora {

/// Synthetic blob task used by every experiment.
struct DataSpec {
  std::size_t n_classes = 10;
  std::size_t samples_per_class = 60;
  std::size_t heldout_per_class = 20;
  std::size_t input_dim = 16;
  double spread = 0.5;
  std::uint64_t seed = 1;

  bool operator==(const DataSpec&) const = default;
};

struct ExperimentSpec {
  std::string preset = "default";
  FederationConfig federation;
  DataSpec data;
  /// Extra Dirichlet concentrations to sweep; empty runs federation.dirichlet_alpha only.
  std::vector<double> alpha_grid;
  std::string output = "metrics.jsonl";
};

bool operator==(const ExperimentSpec& a, const ExperimentSpec& b);
bool operator==(const FederationConfig& a, const FederationConfig& b);

/// Bad config text. `line()` is 0 for errors not tied to a line (e.g. a
/// violated cross-key invariant or an environment override).
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::size_t line, const std::string& what);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

std::vector<std::string> preset_names();
/// Throws ConfigError for unknown names.
ExperimentSpec preset(std::string_view name);

/// `key = value` lines, `#` comments. A `preset` key (anywhere) selects the
/// starting point; other keys override it. Lists are comma separated.
ExperimentSpec parse_config(std::string_view text);
std::string serialize_config(const ExperimentSpec& spec);

/// Every config key, in serialization order.
std::vector<std::string> config_keys();
/// ILORA_ + key upper-cased with dots as underscores, e.g. ILORA_FEDERATION_ROUNDS.
std::string env_name(std::string_view key);

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
/// Applies any environment overrides found through `lookup`, then revalidates.
void apply_env_overrides(ExperimentSpec& spec, const EnvLookup& lookup);

/// Sets the data, partition, training and model seeds to `seed`.
void apply_seed(ExperimentSpec& spec, std::uint64_t seed);

/// Checks cross-key invariants against the dataset shape; throws ConfigError.
void validate_spec(const ExperimentSpec& spec);

struct Datasets {
  std::shared_ptr<const Dataset> train;
  std::shared_ptr<const Dataset> heldout;
};

Datasets make_datasets(const DataSpec& data);

/// One JSON object per round (fields of RoundMetrics, fixed order).
std::string metrics_line(const RoundMetrics& m);

/// The dirichlet_alpha values a spec runs: the grid if present, else the single value.
std::vector<double> alphas_of(const ExperimentSpec& spec);

using RoundCallback = std::function<void(const RoundMetrics&)>;

/// Runs the spec at federation.dirichlet_alpha. `on_round` sees each record as
/// soon as its round finishes, so a later aborted round leaves earlier ones.
std::vector<RoundMetrics> run_experiment(const ExperimentSpec& spec,
                                         const ExecutionPolicy& policy = {},
                                         const RoundCallback& on_round = {});

struct CheckResult {
  std::string suite;
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double threshold = 0.0;
  std::string detail;
};

class UnknownSuiteError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::vector<std::string> suite_names();
/// Runs a named suite ("all" runs every suite). Throws UnknownSuiteError.
std::vector<CheckResult> run_verify(std::string_view suite);
std::string format_check(const CheckResult& c);

}  // namespace ilora
