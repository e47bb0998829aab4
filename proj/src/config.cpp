#include <algorithm>
#include <charconv>
#include <map>
#include <sstream>

#include "ilora/experiments.hpp"

namespace ilora {

namespace {

struct BadValue {
  std::string what;
};

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view text, const char* type) {
  T value{};
  const char* end = text.data() + text.size();
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc() || ptr != end) {
    throw BadValue{"expected " + std::string(type) + ", got '" + std::string(text) + "'"};
  }
  return value;
}

std::size_t parse_count(std::string_view v) {
  if (!v.empty() && v.front() == '-') throw BadValue{"expected non-negative integer, got '" + std::string(v) + "'"};
  return parse_number<std::size_t>(v, "non-negative integer");
}

std::uint64_t parse_seed(std::string_view v) {
  if (!v.empty() && v.front() == '-') throw BadValue{"expected non-negative integer, got '" + std::string(v) + "'"};
  return parse_number<std::uint64_t>(v, "non-negative integer");
}

double parse_real(std::string_view v) { return parse_number<double>(v, "number"); }

template <typename T, typename F>
std::vector<T> parse_list(std::string_view v, F item) {
  std::vector<T> out;
  while (true) {
    const auto comma = v.find(',');
    out.push_back(item(trim(v.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

std::string fmt(double x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

std::string fmt(std::uint64_t x) { return std::to_string(x); }

template <typename T>
std::string fmt_list(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += fmt(static_cast<std::conditional_t<std::is_floating_point_v<T>, double, std::uint64_t>>(xs[i]));
  }
  return out;
}

std::string_view architecture_name(Architecture a) {
  return a == Architecture::kLinear ? "linear" : "one_hidden";
}

struct Key {
  const char* name;
  void (*set)(ExperimentSpec&, std::string_view);
  std::string (*get)(const ExperimentSpec&);
};

#define ILORA_COUNT_KEY(key, field)                                                      \
  Key {                                                                                  \
    key, [](ExperimentSpec& s, std::string_view v) { s.field = parse_count(v); },      \
        [](const ExperimentSpec& s) { return fmt(static_cast<std::uint64_t>(s.field)); } \
  }
#define ILORA_SEED_KEY(key, field)                                                \
  Key {                                                                           \
    key, [](ExperimentSpec& s, std::string_view v) { s.field = parse_seed(v); }, \
        [](const ExperimentSpec& s) { return fmt(s.field); }                      \
  }
#define ILORA_REAL_KEY(key, field)                                                \
  Key {                                                                           \
    key, [](ExperimentSpec& s, std::string_view v) { s.field = parse_real(v); }, \
        [](const ExperimentSpec& s) { return fmt(s.field); }                      \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      Key{"preset", [](ExperimentSpec&, std::string_view) {},
          [](const ExperimentSpec& s) { return s.preset; }},
      ILORA_COUNT_KEY("federation.n_clients", federation.n_clients),
      ILORA_REAL_KEY("federation.participation", federation.participation),
      ILORA_COUNT_KEY("federation.local_epochs", federation.local_epochs),
      ILORA_COUNT_KEY("federation.batch_size", federation.batch_size),
      ILORA_COUNT_KEY("federation.rounds", federation.rounds),
      Key{"federation.client_ranks",
          [](ExperimentSpec& s, std::string_view v) {
            s.federation.client_ranks = parse_list<std::size_t>(v, parse_count);
          },
          [](const ExperimentSpec& s) { return fmt_list(s.federation.client_ranks); }},
      ILORA_COUNT_KEY("federation.server_rank", federation.server_rank),
      Key{"federation.method",
          [](ExperimentSpec& s, std::string_view v) {
            const auto m = parse_method(v);
            if (!m) throw BadValue{"unknown method '" + std::string(v) + "'"};
            s.federation.method = *m;
          },
          [](const ExperimentSpec& s) { return std::string(method_name(s.federation.method)); }},
      ILORA_REAL_KEY("federation.lora_alpha", federation.lora_alpha),
      ILORA_REAL_KEY("federation.global_scale", federation.global_scale),
      ILORA_REAL_KEY("optimizer.lr", federation.optimizer.lr),
      ILORA_REAL_KEY("optimizer.beta1", federation.optimizer.beta1),
      ILORA_REAL_KEY("optimizer.beta2", federation.optimizer.beta2),
      ILORA_REAL_KEY("optimizer.eps", federation.optimizer.eps),
      ILORA_REAL_KEY("optimizer.weight_decay", federation.optimizer.weight_decay),
      ILORA_REAL_KEY("partition.alpha", federation.dirichlet_alpha),
      Key{"partition.alpha_grid",
          [](ExperimentSpec& s, std::string_view v) {
            s.alpha_grid = trim(v).empty() ? std::vector<double>{}
                                           : parse_list<double>(v, parse_real);
          },
          [](const ExperimentSpec& s) { return fmt_list(s.alpha_grid); }},
      ILORA_SEED_KEY("partition.seed", federation.partition_seed),
      ILORA_SEED_KEY("training.seed", federation.training_seed),
      Key{"model.architecture",
          [](ExperimentSpec& s, std::string_view v) {
            if (v == "linear") {
              s.federation.model.architecture = Architecture::kLinear;
            } else if (v == "one_hidden") {
              s.federation.model.architecture = Architecture::kOneHidden;
            } else {
              throw BadValue{"unknown architecture '" + std::string(v) + "'"};
            }
          },
          [](const ExperimentSpec& s) {
            return std::string(architecture_name(s.federation.model.architecture));
          }},
      ILORA_COUNT_KEY("model.hidden_units", federation.model.hidden_units),
      ILORA_REAL_KEY("model.init_scale", federation.model.init_scale),
      ILORA_SEED_KEY("model.seed", federation.model.seed),
      ILORA_COUNT_KEY("data.n_classes", data.n_classes),
      ILORA_COUNT_KEY("data.samples_per_class", data.samples_per_class),
      ILORA_COUNT_KEY("data.heldout_per_class", data.heldout_per_class),
      ILORA_COUNT_KEY("data.input_dim", data.input_dim),
      ILORA_REAL_KEY("data.spread", data.spread),
      ILORA_SEED_KEY("data.seed", data.seed),
      Key{"output.path", [](ExperimentSpec& s, std::string_view v) { s.output = std::string(v); },
          [](const ExperimentSpec& s) { return s.output; }},
  };
  return table;
}

#undef ILORA_COUNT_KEY
#undef ILORA_SEED_KEY
#undef ILORA_REAL_KEY

const Key* find_key(std::string_view name) {
  for (const Key& k : keys()) {
    if (name == k.name) return &k;
  }
  return nullptr;
}

struct Violation {
  std::string key;
  std::string what;
};

std::optional<Violation> first_violation(const ExperimentSpec& s) {
  const FederationConfig& f = s.federation;
  const DataSpec& d = s.data;
  if (d.n_classes < 2) return Violation{"data.n_classes", "need at least 2 classes"};
  if (d.samples_per_class == 0) return Violation{"data.samples_per_class", "must be >= 1"};
  if (d.heldout_per_class == 0) return Violation{"data.heldout_per_class", "must be >= 1"};
  if (d.input_dim < d.n_classes) {
    return Violation{"data.input_dim", "must be >= data.n_classes (one axis per class centre)"};
  }
  if (!(d.spread > 0.0)) return Violation{"data.spread", "must be > 0"};
  if (f.model.architecture == Architecture::kOneHidden && f.model.hidden_units == 0) {
    return Violation{"model.hidden_units", "must be >= 1"};
  }
  if (!(f.model.init_scale > 0.0)) return Violation{"model.init_scale", "must be > 0"};
  if (f.n_clients == 0) return Violation{"federation.n_clients", "must be >= 1"};
  if (f.n_clients > d.n_classes * d.samples_per_class) {
    return Violation{"federation.n_clients", "more clients than training samples"};
  }
  if (!(f.participation > 0.0 && f.participation <= 1.0)) {
    return Violation{"federation.participation", "must be in (0, 1]"};
  }
  if (f.sampled_per_round() == 0) {
    return Violation{"federation.participation", "floor(participation * n_clients) must be >= 1"};
  }
  if (f.local_epochs == 0) return Violation{"federation.local_epochs", "must be >= 1"};
  if (f.batch_size == 0) return Violation{"federation.batch_size", "must be >= 1"};
  if (f.rounds == 0) return Violation{"federation.rounds", "must be >= 1"};
  if (f.client_ranks.empty()) return Violation{"federation.client_ranks", "must not be empty"};
  const std::size_t feature_dim =
      f.model.architecture == Architecture::kLinear ? d.input_dim : f.model.hidden_units;
  const std::size_t max_rank = std::min(d.n_classes, feature_dim);
  if (f.server_rank == 0 || f.server_rank > max_rank) {
    return Violation{"federation.server_rank",
                     "must be in [1, " + std::to_string(max_rank) + "] = [1, min(d, k)]"};
  }
  for (std::size_t r : f.client_ranks) {
    if (r == 0 || r > f.server_rank) {
      return Violation{"federation.client_ranks", "every rank must be in [1, server_rank]"};
    }
  }
  if (f.method == Method::kFeditAvg) {
    for (std::size_t i = 0; i < f.n_clients; ++i) {
      if (f.rank_of(i) != f.rank_of(0)) {
        return Violation{"federation.method", "fedit_avg needs equal client ranks"};
      }
    }
  }
  if (!(f.lora_alpha > 0.0)) return Violation{"federation.lora_alpha", "must be > 0"};
  if (!(f.global_scale >= 0.0)) return Violation{"federation.global_scale", "must be >= 0"};
  if (!(f.optimizer.lr >= 0.0)) return Violation{"optimizer.lr", "must be >= 0"};
  if (!(f.optimizer.beta1 >= 0.0 && f.optimizer.beta1 < 1.0)) {
    return Violation{"optimizer.beta1", "must be in [0, 1)"};
  }
  if (!(f.optimizer.beta2 >= 0.0 && f.optimizer.beta2 < 1.0)) {
    return Violation{"optimizer.beta2", "must be in [0, 1)"};
  }
  if (!(f.optimizer.eps > 0.0)) return Violation{"optimizer.eps", "must be > 0"};
  if (!(f.optimizer.weight_decay >= 0.0)) return Violation{"optimizer.weight_decay", "must be >= 0"};
  if (!(f.dirichlet_alpha > 0.0)) return Violation{"partition.alpha", "must be > 0"};
  for (double a : s.alpha_grid) {
    if (!(a > 0.0)) return Violation{"partition.alpha_grid", "every alpha must be > 0"};
  }
  if (s.output.empty()) return Violation{"output.path", "must not be empty"};
  return std::nullopt;
}

}  // namespace

ConfigError::ConfigError(std::size_t line, const std::string& what)
    : std::invalid_argument(line ? "line " + std::to_string(line) + ": " + what : what),
      line_(line) {}

bool operator==(const FederationConfig& a, const FederationConfig& b) {
  auto tie = [](const FederationConfig& c) {
    return std::tie(c.n_clients, c.participation, c.local_epochs, c.batch_size, c.rounds,
                    c.client_ranks, c.server_rank, c.method, c.lora_alpha, c.global_scale,
                    c.dirichlet_alpha, c.partition_seed, c.training_seed, c.optimizer.lr,
                    c.optimizer.beta1, c.optimizer.beta2, c.optimizer.eps,
                    c.optimizer.weight_decay, c.model.architecture, c.model.hidden_units,
                    c.model.init_scale, c.model.seed);
  };
  return tie(a) == tie(b);
}

bool operator==(const ExperimentSpec& a, const ExperimentSpec& b) {
  return a.preset == b.preset && a.federation == b.federation && a.data == b.data &&
         a.alpha_grid == b.alpha_grid && a.output == b.output;
}

std::vector<std::string> preset_names() { return {"default", "paper-hetero", "canonical"}; }

ExperimentSpec preset(std::string_view name) {
  ExperimentSpec s;
  s.preset = std::string(name);
  if (name == "default") return s;
  if (name == "paper-hetero") {
    s.federation.n_clients = 6;
    s.federation.client_ranks = {2, 8, 16};
    s.federation.server_rank = 16;
    s.federation.dirichlet_alpha = 0.5;
    s.federation.global_scale = 0.5;
    s.alpha_grid = {0.1, 0.5, 1.0};
    s.data.n_classes = 20;
    s.data.input_dim = 32;
    return s;
  }
  if (name == "canonical") {
    FederationConfig& f = s.federation;
    f.n_clients = 8;
    f.local_epochs = 2;
    f.rounds = 30;
    f.batch_size = 16;
    f.client_ranks = {6};
    f.server_rank = 6;
    f.dirichlet_alpha = 0.3;
    f.optimizer.lr = 7e-3;
    f.model.architecture = Architecture::kLinear;
    s.data.n_classes = 8;
    s.data.samples_per_class = 40;
    s.data.heldout_per_class = 40;
    s.data.input_dim = 16;
    s.data.spread = 0.3;
    return s;
  }
  throw ConfigError(0, "unknown preset '" + std::string(name) + "'");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Key& k : keys()) out.emplace_back(k.name);
  return out;
}

std::string env_name(std::string_view key) {
  std::string out = "ILORA_";
  for (char c : key) {
    out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  }
  return out;
}

void validate_spec(const ExperimentSpec& spec) {
  if (auto v = first_violation(spec)) throw ConfigError(0, v->key + ": " + v->what);
}

ExperimentSpec parse_config(std::string_view text) {
  struct Entry {
    std::size_t line;
    std::string key;
    std::string value;
  };
  std::vector<Entry> entries;
  std::map<std::string, std::size_t> seen;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(line_no, "expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (!find_key(key)) throw ConfigError(line_no, "unknown key '" + key + "'");
    if (auto it = seen.find(key); it != seen.end()) {
      throw ConfigError(line_no, "duplicate key '" + key + "' (first set on line " +
                                     std::to_string(it->second) + ")");
    }
    seen[key] = line_no;
    entries.push_back({line_no, key, value});
  }

  ExperimentSpec spec;
  if (auto it = seen.find("preset"); it != seen.end()) {
    const auto& e = *std::find_if(entries.begin(), entries.end(),
                                  [](const Entry& e) { return e.key == "preset"; });
    try {
      spec = preset(e.value);
    } catch (const ConfigError& err) {
      throw ConfigError(e.line, err.what());
    }
  }
  for (const Entry& e : entries) {
    try {
      find_key(e.key)->set(spec, e.value);
    } catch (const BadValue& bad) {
      throw ConfigError(e.line, e.key + ": " + bad.what);
    }
  }
  // heterogeneous ranks without an explicit server rank get max(6, max r_k)
  if (seen.count("federation.client_ranks") && !seen.count("federation.server_rank") &&
      !spec.federation.client_ranks.empty()) {
    const auto& r = spec.federation.client_ranks;
    const std::size_t hi = *std::max_element(r.begin(), r.end());
    const bool equal = std::all_of(r.begin(), r.end(), [&](std::size_t x) { return x == hi; });
    spec.federation.server_rank = equal ? hi : std::max<std::size_t>(6, hi);
  }
  if (auto v = first_violation(spec)) {
    auto it = seen.find(v->key);
    throw ConfigError(it == seen.end() ? 0 : it->second, v->key + ": " + v->what);
  }
  return spec;
}

std::string serialize_config(const ExperimentSpec& spec) {
  std::string out;
  for (const Key& k : keys()) {
    out += k.name;
    out += " = ";
    out += k.get(spec);
    out += '\n';
  }
  return out;
}

void apply_env_overrides(ExperimentSpec& spec, const EnvLookup& lookup) {
  for (const Key& k : keys()) {
    const std::string name = env_name(k.name);
    const auto value = lookup(name);
    if (!value) continue;
    if (std::string_view(k.name) == "preset") {
      throw ConfigError(0, name + ": the preset cannot be overridden from the environment");
    }
    try {
      k.set(spec, trim(*value));
    } catch (const BadValue& bad) {
      throw ConfigError(0, name + ": " + bad.what);
    }
  }
  validate_spec(spec);
}

void apply_seed(ExperimentSpec& spec, std::uint64_t seed) {
  spec.data.seed = seed;
  spec.federation.partition_seed = seed;
  spec.federation.training_seed = seed;
  spec.federation.model.seed = seed;
}

}  // namespace ilora
