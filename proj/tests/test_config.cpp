#include <doctest.h>

#include <map>
#include <sstream>

#include <json.hpp>

#include "ilora/experiments.hpp"

using ilora::ConfigError;
using ilora::ExperimentSpec;

namespace {

std::size_t error_line(std::string_view text) {
  try {
    ilora::parse_config(text);
  } catch (const ConfigError& e) {
    return e.line();
  }
  FAIL("config parsed unexpectedly: " << text);
  return 0;
}

}  // namespace

TEST_CASE("empty config is the default preset") {
  CHECK(ilora::parse_config("") == ilora::preset("default"));
  CHECK(ilora::parse_config("# nothing here\n\n   \n") == ilora::preset("default"));
}

TEST_CASE("every preset serializes and parses back unchanged") {
  for (const auto& name : ilora::preset_names()) {
    const ExperimentSpec s = ilora::preset(name);
    CHECK(ilora::parse_config(ilora::serialize_config(s)) == s);
  }
}

TEST_CASE("awkward values survive a round trip") {
  ExperimentSpec s = ilora::parse_config(
      "federation.client_ranks = 1, 3,2\n"
      "federation.server_rank = 5\n"
      "optimizer.lr = 0.0070000000000000001\n"
      "partition.alpha = 0.1\n"
      "partition.alpha_grid = 1e-3, 0.3, 1000000\n"
      "model.architecture = one_hidden\n"
      "training.seed = 18446744073709551615\n"
      "output.path = runs/x.jsonl\n");
  CHECK(s.federation.client_ranks == std::vector<std::size_t>{1, 3, 2});
  CHECK(s.federation.training_seed == 18446744073709551615ULL);
  CHECK(ilora::parse_config(ilora::serialize_config(s)) == s);
}

TEST_CASE("serialized keys follow the key table") {
  std::istringstream in(ilora::serialize_config(ilora::preset("default")));
  std::vector<std::string> keys;
  for (std::string line; std::getline(in, line);) keys.push_back(line.substr(0, line.find(" = ")));
  CHECK(keys == ilora::config_keys());
}

TEST_CASE("paper-hetero preset") {
  const ExperimentSpec s = ilora::preset("paper-hetero");
  CHECK(s.federation.n_clients == 6);
  CHECK(s.federation.client_ranks == std::vector<std::size_t>{2, 8, 16});
  CHECK(s.federation.server_rank == 16);
  CHECK(s.federation.dirichlet_alpha == 0.5);
  CHECK(s.alpha_grid == std::vector<double>{0.1, 0.5, 1.0});
  CHECK(ilora::alphas_of(s) == s.alpha_grid);
  CHECK(ilora::alphas_of(ilora::preset("default")) == std::vector<double>{0.5});
  CHECK_NOTHROW(ilora::validate_spec(s));
  CHECK_THROWS_AS(ilora::preset("nope"), ConfigError);
}

TEST_CASE("preset key selects the base regardless of position") {
  const ExperimentSpec s = ilora::parse_config("federation.rounds = 2\npreset = canonical\n");
  ExperimentSpec want = ilora::preset("canonical");
  want.federation.rounds = 2;
  CHECK(s == want);
}

TEST_CASE("errors carry the offending line") {
  CHECK(error_line("federation.rounds = 3\nbogus.key = 1\n") == 2);
  CHECK(error_line("federation.rounds = 3\n\nfederation.rounds = 4\n") == 3);
  CHECK(error_line("# c\nfederation.rounds = three\n") == 2);
  CHECK(error_line("federation.rounds\n") == 1);
  CHECK(error_line("federation.method = fedavg\n") == 1);
  CHECK(error_line("optimizer.lr = -1\n") == 1);
  CHECK(error_line("preset = nope\n") == 1);
  CHECK(error_line("federation.rounds = 3\nfederation.client_ranks = 9\nfederation.server_rank = 4\n") == 2);
}

TEST_CASE("server rank defaults from client ranks") {
  CHECK(ilora::parse_config("federation.client_ranks = 2\n").federation.server_rank == 2);
  CHECK(ilora::parse_config("federation.client_ranks = 2,4\n").federation.server_rank == 6);
  CHECK(ilora::parse_config("federation.client_ranks = 2,8\n").federation.server_rank == 8);
  CHECK(ilora::parse_config("federation.client_ranks = 2,4\nfederation.server_rank = 4\n")
            .federation.server_rank == 4);
}

TEST_CASE("environment overrides") {
  CHECK(ilora::env_name("federation.rounds") == "ILORA_FEDERATION_ROUNDS");
  const std::map<std::string, std::string> env{{"ILORA_FEDERATION_ROUNDS", "9"},
                                               {"ILORA_OPTIMIZER_LR", "0.25"},
                                               {"ILORA_UNRELATED", "x"}};
  auto lookup = [&](const std::string& name) -> std::optional<std::string> {
    auto it = env.find(name);
    if (it == env.end()) return std::nullopt;
    return it->second;
  };
  ExperimentSpec s = ilora::preset("default");
  ilora::apply_env_overrides(s, lookup);
  CHECK(s.federation.rounds == 9);
  CHECK(s.federation.optimizer.lr == 0.25);

  auto bad = [](std::string name, std::string value) {
    return [=](const std::string& n) -> std::optional<std::string> {
      if (n == name) return value;
      return std::nullopt;
    };
  };
  ExperimentSpec t = ilora::preset("default");
  CHECK_THROWS_AS(ilora::apply_env_overrides(t, bad("ILORA_FEDERATION_ROUNDS", "0")), ConfigError);
  CHECK_THROWS_AS(ilora::apply_env_overrides(t, bad("ILORA_PRESET", "canonical")), ConfigError);
  CHECK_THROWS_AS(ilora::apply_env_overrides(t, bad("ILORA_DATA_SPREAD", "wide")), ConfigError);
}

TEST_CASE("one seed sets every stream") {
  ExperimentSpec s = ilora::preset("default");
  ilora::apply_seed(s, 77);
  CHECK(s.data.seed == 77);
  CHECK(s.federation.partition_seed == 77);
  CHECK(s.federation.training_seed == 77);
  CHECK(s.federation.model.seed == 77);
}

TEST_CASE("dataset-dependent invariants") {
  ExperimentSpec s = ilora::preset("default");
  s.federation.server_rank = s.data.n_classes + 1;
  CHECK_THROWS_AS(ilora::validate_spec(s), ConfigError);
  s = ilora::preset("default");
  s.federation.n_clients = s.data.n_classes * s.data.samples_per_class + 1;
  CHECK_THROWS_AS(ilora::validate_spec(s), ConfigError);
}

TEST_CASE("experiment emits one well-formed record per round") {
  ExperimentSpec s = ilora::preset("default");
  s.federation.rounds = 3;
  s.data.samples_per_class = 12;
  s.data.heldout_per_class = 4;
  std::vector<std::string> streamed;
  const auto metrics = ilora::run_experiment(s, {}, [&](const ilora::RoundMetrics& m) {
    streamed.push_back(ilora::metrics_line(m));
  });
  REQUIRE(metrics.size() == 3);
  REQUIRE(streamed.size() == 3);
  for (std::size_t t = 0; t < 3; ++t) {
    const auto j = nlohmann::json::parse(streamed[t]);
    CHECK(j.at("round").get<std::size_t>() == t + 1);
    for (const char* f : {"train_loss", "train_accuracy", "heldout_accuracy", "truncation_error", "drift",
                          "grad_heterogeneity"}) {
      CHECK(j.at(f).get<double>() >= 0.0);
    }
    CHECK(j.at("train_accuracy").get<double>() <= 1.0);
    CHECK(j.at("bytes_down").get<std::uint64_t>() > 0);
    CHECK(j.at("bytes_up").get<std::uint64_t>() > 0);
    CHECK(j.at("sampled").get<std::size_t>() == s.federation.sampled_per_round());
    CHECK(j.size() == 11);
  }
  const auto again = ilora::run_experiment(s);
  for (std::size_t t = 0; t < 3; ++t) CHECK(ilora::metrics_line(again[t]) == streamed[t]);
}
