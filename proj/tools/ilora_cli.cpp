#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ilora/experiments.hpp"

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::optional<std::string> from_env(const std::string& name) {
  if (const char* v = std::getenv(name.c_str())) return std::string(v);
  return std::nullopt;
}

// metrics.jsonl -> metrics.alpha-0.1.jsonl when sweeping a grid
std::string output_for(const std::string& base, double alpha, bool grid) {
  if (!grid) return base;
  std::filesystem::path p(base);
  std::ostringstream name;
  name << p.stem().string() << ".alpha-" << alpha << p.extension().string();
  return (p.parent_path() / name.str()).string();
}

ilora::ExperimentSpec load_spec(const std::string& config_path) {
  ilora::ExperimentSpec spec = ilora::parse_config(read_file(config_path));
  ilora::apply_env_overrides(spec, from_env);
  return spec;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated LoRA simulator with QR aggregation and control-variate AdamW"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string method;
  std::optional<std::size_t> rounds;
  std::string out_path;
  bool serial = false;
  auto* run = app.add_subcommand("run", "run an experiment and write JSON-lines metrics");
  run->add_option("--config", config_path, "config file (key = value lines)")->required();
  run->add_option("--seed", seed, "set data, partition, training and model seeds");
  run->add_option("--method", method, "ilora | ilora_s | fedit_avg | zero_pad | full_stack");
  run->add_option("--rounds", rounds, "number of rounds T");
  run->add_option("--out", out_path, "metrics file (overrides output.path)");
  run->add_flag("--serial", serial, "train clients serially instead of with OpenMP");

  std::string suite;
  auto* verify = app.add_subcommand("verify", "run acceptance suites");
  verify->add_option("--suite", suite, "suite name or 'all'")->required();

  std::string show_preset;
  auto* show = app.add_subcommand("show-config", "print the effective config");
  show->add_option("--config", config_path, "config file");
  show->add_option("--preset", show_preset, "preset name");

  std::string data_out;
  auto* export_data = app.add_subcommand("export-data", "write the training set as a text table");
  export_data->add_option("--config", config_path, "config file")->required();
  export_data->add_option("--out", data_out, "output path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      ilora::ExperimentSpec spec = load_spec(config_path);
      if (seed) ilora::apply_seed(spec, *seed);
      if (!method.empty()) {
        const auto m = ilora::parse_method(method);
        if (!m) throw ilora::ConfigError(0, "unknown method '" + method + "'");
        spec.federation.method = *m;
      }
      if (rounds) spec.federation.rounds = *rounds;
      if (!out_path.empty()) spec.output = out_path;
      ilora::validate_spec(spec);

      const auto alphas = ilora::alphas_of(spec);
      for (double alpha : alphas) {
        ilora::ExperimentSpec one = spec;
        one.federation.dirichlet_alpha = alpha;
        const std::string path = output_for(spec.output, alpha, !spec.alpha_grid.empty());
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + path);
        ilora::run_experiment(one, {.parallel = !serial}, [&](const ilora::RoundMetrics& m) {
          out << ilora::metrics_line(m) << '\n';
          out.flush();
        });
        std::cerr << "wrote " << one.federation.rounds << " rounds to " << path << '\n';
      }
      return 0;
    }
    if (*verify) {
      bool ok = true;
      for (const auto& c : ilora::run_verify(suite)) {
        std::cout << ilora::format_check(c) << '\n';
        ok = ok && c.passed;
      }
      return ok ? 0 : 1;
    }
    if (*show) {
      ilora::ExperimentSpec spec =
          config_path.empty() ? ilora::preset(show_preset.empty() ? "default" : show_preset)
                              : load_spec(config_path);
      std::cout << ilora::serialize_config(spec);
      return 0;
    }
    if (*export_data) {
      const ilora::ExperimentSpec spec = load_spec(config_path);
      const ilora::Datasets ds = ilora::make_datasets(spec.data);
      std::ofstream out(data_out, std::ios::binary | std::ios::trunc);
      if (!out) throw std::runtime_error("cannot write " + data_out);
      out << ilora::format_dataset(*ds.train);
      return 0;
    }
  } catch (const ilora::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ilora::RoundAborted& e) {
    std::cerr << "aborted: " << e.what() << '\n';
    return 3;
  } catch (const ilora::UnknownSuiteError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
