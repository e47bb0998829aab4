#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>

#include "ilora/experiments.hpp"
#include "ilora/random.hpp"

namespace ilora {

namespace {

using Checks = std::vector<CheckResult>;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

CheckResult at_most(std::string suite, std::string name, double measured, double limit,
                    std::string detail = {}) {
  return {std::move(suite), std::move(name), measured <= limit, measured, limit, std::move(detail)};
}

std::size_t uniform(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Σ p_k s_k B_k A_k accumulated one product at a time.
Matrix weighted_sum(const std::vector<ClientUpdate>& updates) {
  double total = 0.0;
  for (const auto& u : updates) total += static_cast<double>(u.sample_count);
  const LoraAdapter& first = updates.front().adapter;
  Matrix sum(first.out_dim(), first.in_dim());
  for (const auto& u : updates) {
    sum += (static_cast<double>(u.sample_count) / total) * u.adapter.delta();
  }
  return sum;
}

std::vector<ClientUpdate> random_updates(Rng& rng, std::size_t d, std::size_t k,
                                         std::size_t n_clients, std::size_t max_rank) {
  std::vector<ClientUpdate> out;
  for (std::size_t c = 0; c < n_clients; ++c) {
    const std::size_t r = uniform(rng, 1, std::min({max_rank, d, k}));
    LoraAdapter ad(gaussian_matrix(d, r, rng), gaussian_matrix(r, k, rng),
                   lora_scaling(16.0, r));
    out.push_back({c, std::move(ad), uniform(rng, 1, 100), std::nullopt});
  }
  return out;
}

Checks suite_exactness() {
  const auto t0 = Clock::now();
  Rng rng = make_rng({0xe7ac7ULL});
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t d = uniform(rng, 8, 32);
    const std::size_t k = uniform(rng, 8, 32);
    const auto updates = random_updates(rng, d, k, uniform(rng, 2, 8), 6);
    const Matrix oracle = weighted_sum(updates);
    const double err = frobenius_norm(concat_reconstruct(updates) - oracle);
    worst = std::max(worst, err / (1.0 + frobenius_norm(oracle)));
  }
  return {at_most("exactness", "concat_reconstruct vs term-by-term sum (200 instances)", worst,
                  1e-12, "relative to 1+||sum||"),
          at_most("exactness", "runtime seconds", seconds_since(t0), 5.0)};
}

Checks suite_truncation() {
  Rng rng = make_rng({0x7e0cULL});
  double worst = 0.0;
  double worst_lossless = 0.0;
  std::size_t lossless = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t d = uniform(rng, 8, 32);
    const std::size_t k = uniform(rng, 8, 32);
    const std::size_t full = std::min(d, k);
    const std::size_t rho = uniform(rng, 1, full);
    const Matrix delta = matmul(gaussian_matrix(d, rho, rng), gaussian_matrix(rho, k, rng));
    // every other instance has r_s >= rank(delta)
    const std::size_t rs = i % 2 == 0 ? uniform(rng, rho, full) : uniform(rng, 1, full);
    const AggregationResult res = qr_compress(delta, rs);
    const double direct = frobenius_norm(delta - matmul(res.server_adapter.b(), res.server_adapter.a()));
    worst = std::max(worst, std::abs(direct - res.truncation_error));
    if (rho <= rs) {
      ++lossless;
      worst_lossless = std::max({worst_lossless, res.truncation_error, direct});
    }
  }
  return {at_most("truncation", "| ||delta - BsAs|| - ||R22|| | (100 instances)", worst, 1e-9),
          at_most("truncation",
                  "lossless error when rank <= r_s (" + std::to_string(lossless) + " instances)",
                  worst_lossless, 1e-10)};
}

Checks suite_bias() {
  std::vector<ClientUpdate> updates;
  updates.push_back({0, LoraAdapter(Matrix{{1.0}, {0.0}}, Matrix{{1.0, 0.0}}), 1, std::nullopt});
  updates.push_back({1, LoraAdapter(Matrix{{0.0}, {1.0}}, Matrix{{0.0, 1.0}}), 1, std::nullopt});
  const Matrix correct{{0.5, 0.0}, {0.0, 0.5}};
  const double bias = frobenius_norm(baseline_factor_average(updates) - correct);
  const double ilora = frobenius_norm(concat_reconstruct(updates) - correct);
  return {at_most("bias", "|factor-average bias - 0.5|", std::abs(bias - 0.5), 1e-12,
                  "bias = " + std::to_string(bias)),
          at_most("bias", "ILoRA pre-truncation error", ilora, 1e-12)};
}

ExperimentSpec small_spec(Method method) {
  ExperimentSpec s = preset("canonical");
  s.federation.method = method;
  return s;
}

Checks suite_subspace() {
  ExperimentSpec s = small_spec(Method::kIlora);
  s.federation.client_ranks = {2, 4, 6};
  s.federation.server_rank = 6;
  s.federation.rounds = 10;
  s.federation.participation = 0.75;
  validate_spec(s);
  const Datasets ds = make_datasets(s.data);
  Federation fed = init_federation(s.federation, ds.train, ds.heldout);
  double worst = 0.0;
  double worst_orth = 0.0;
  std::size_t calls = 0;
  for (std::size_t t = 0; t < s.federation.rounds; ++t) {
    run_round(fed);
    const AggregationResult& res = *fed.server.last_aggregation;
    const Matrix& basis = res.server_adapter.b();
    worst_orth = std::max(worst_orth, orthonormality_defect(basis));
    for (std::size_t r = 1; r <= res.server_rank(); ++r, ++calls) {
      worst = std::max(worst, subspace_residual(basis, personalize(res, r).b()));
    }
    for (const ClientState& c : fed.clients) {
      if (c.synced_round != fed.server.round) continue;
      worst = std::max(worst, subspace_residual(basis, c.adapter.b()));
      ++calls;
    }
  }
  return {at_most("subspace",
                  "subspace residual of personalized B (" + std::to_string(calls) + " slices)",
                  worst, 1e-10),
          at_most("subspace", "server B_s orthonormality defect", worst_orth, 1e-10)};
}

double relative(const Matrix& fd, const Matrix& an) {
  const double scale = std::max({frobenius_norm(fd), frobenius_norm(an), 1e-300});
  return frobenius_norm(fd - an) / scale;
}

// Central differences of f over every entry of `x`.
Matrix numeric_gradient(Matrix& x, const std::function<double()>& f, double h) {
  Matrix g(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f();
    x.data()[i] = keep - h;
    const double down = f();
    x.data()[i] = keep;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

Checks suite_gradients() {
  const auto t0 = Clock::now();
  constexpr double h = 1e-5;
  Rng rng = make_rng({0x9ad5ULL});
  double worst_factors = 0.0;
  double worst_loss = 0.0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t classes = uniform(rng, 2, 6);
    const std::size_t d_in = uniform(rng, 2, 8);
    const std::size_t n = uniform(rng, 1, 12);
    ModelSetup setup;
    setup.architecture = i % 2 ? Architecture::kOneHidden : Architecture::kLinear;
    setup.hidden_units = uniform(rng, 2, 8);
    setup.seed = static_cast<std::uint64_t>(i);
    setup.init_scale = 0.5;
    const Pretrained pre = make_pretrained(setup, d_in, classes);
    const std::size_t k = pre.theta0.cols();
    std::vector<std::size_t> labels(n);
    for (auto& y : labels) y = uniform(rng, 0, classes - 1);
    const Batch batch(gaussian_matrix(n, d_in, rng), labels);
    Matrix bias = gaussian_matrix(1, classes, rng, 0.3);

    // forward_loss: gradient with respect to the weight and the bias
    Matrix w = gaussian_matrix(classes, k, rng, 0.5);
    const LossAndGrad lg = loss_at(w, bias, pre.features, batch);
    auto at_w = [&] { return loss_at(w, bias, pre.features, batch).loss; };
    worst_loss = std::max(worst_loss, relative(numeric_gradient(w, at_w, h), lg.weight_grad));
    worst_loss = std::max(worst_loss, relative(numeric_gradient(bias, at_w, h), lg.bias_grad));

    // factor gradients through the adapter
    const std::size_t r = uniform(rng, 1, std::min(classes, k));
    const double s = lora_scaling(16.0, r);
    Matrix b = gaussian_matrix(classes, r, rng, 0.5);
    Matrix a = gaussian_matrix(r, k, rng, 0.5);
    const Matrix frozen = gaussian_matrix(classes, k, rng, 0.5);
    auto loss_ab = [&] {
      return loss_at(frozen + s * matmul(b, a), bias, pre.features, batch).loss;
    };
    const LoraAdapter ad(b, a, s);
    const FactorGradients fg = factor_gradients(
        ad, loss_at(frozen + ad.delta(), bias, pre.features, batch).weight_grad);
    worst_factors = std::max(worst_factors, relative(numeric_gradient(b, loss_ab, h), fg.grad_b));
    worst_factors = std::max(worst_factors, relative(numeric_gradient(a, loss_ab, h), fg.grad_a));
  }
  return {at_most("gradients", "factor_gradients vs central differences (50 instances)",
                  worst_factors, 1e-5, "relative Frobenius error"),
          at_most("gradients", "forward_loss vs central differences (50 instances)", worst_loss,
                  1e-5, "relative Frobenius error"),
          at_most("gradients", "runtime seconds", seconds_since(t0), 10.0)};
}

bool bit_equal(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) return false;
  return std::equal(a.data().begin(), a.data().end(), b.data().begin(),
                    [](double x, double y) { return std::memcmp(&x, &y, sizeof x) == 0; });
}

Checks suite_equivalence() {
  Checks out;
  {
    ExperimentSpec s = small_spec(Method::kIlora);
    s.federation.local_epochs = 1;
    s.federation.rounds = 1;
    const Datasets ds = make_datasets(s.data);
    Federation a = init_federation(s.federation, ds.train, ds.heldout);
    s.federation.method = Method::kIloraS;
    Federation b = init_federation(s.federation, ds.train, ds.heldout);
    const RoundMetrics ma = run_round(a);
    const RoundMetrics mb = run_round(b);
    std::size_t mismatched = 0;
    mismatched += !bit_equal(a.server.global_weight, b.server.global_weight);
    mismatched += !bit_equal(a.server.global_bias, b.server.global_bias);
    for (std::size_t i = 0; i < a.clients.size(); ++i) {
      mismatched += !bit_equal(a.clients[i].adapter.b(), b.clients[i].adapter.b());
      mismatched += !bit_equal(a.clients[i].adapter.a(), b.clients[i].adapter.a());
    }
    mismatched += ma.train_loss != mb.train_loss || ma.drift != mb.drift;
    out.push_back(at_most("equivalence", "ilora_s round 1 vs ilora round 1: differing tensors",
                          static_cast<double>(mismatched), 0.0, "bitwise, E = 1"));
  }
  {
    ExperimentSpec s = small_spec(Method::kIlora);
    s.federation.n_clients = 3;
    s.federation.client_ranks = {1, 2, 3};
    s.federation.server_rank = 6;
    s.federation.rounds = 5;
    validate_spec(s);
    const Datasets ds = make_datasets(s.data);
    Federation a = init_federation(s.federation, ds.train, ds.heldout);
    s.federation.method = Method::kFullStack;
    Federation b = init_federation(s.federation, ds.train, ds.heldout);
    double worst = 0.0;
    for (std::size_t t = 0; t < s.federation.rounds; ++t) {
      run_round(a);
      run_round(b);
      worst = std::max(worst, frobenius_norm(a.server.global_weight - b.server.global_weight));
    }
    out.push_back(at_most("equivalence", "ilora vs full_stack global model, r_s >= sum r_k, 5 rounds",
                          worst, 1e-9, "max Frobenius gap"));
  }
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Checks suite_drift() {
  const auto t0 = Clock::now();
  std::map<Method, std::vector<double>> drift, loss, acc;
  double worst_gap = 1.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (Method m : {Method::kIlora, Method::kIloraS}) {
      ExperimentSpec s = small_spec(m);
      apply_seed(s, seed);
      const RoundMetrics last = run_experiment(s).back();
      drift[m].push_back(last.drift);
      loss[m].push_back(last.train_loss);
      acc[m].push_back(last.heldout_accuracy);
    }
    worst_gap = std::min(worst_gap, acc[Method::kIloraS].back() - acc[Method::kIlora].back());
  }
  const auto cmp = [](const std::string& name, double s, double base) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "ilora_s %.6g vs ilora %.6g", s, base);
    return CheckResult{"drift", name, s < base, s - base, 0.0, buf};
  };
  Checks out;
  out.push_back(cmp("median final drift: ilora_s < ilora", median(drift[Method::kIloraS]),
                    median(drift[Method::kIlora])));
  out.push_back(cmp("median final train loss: ilora_s < ilora", median(loss[Method::kIloraS]),
                    median(loss[Method::kIlora])));
  out.push_back(CheckResult{"drift", "held-out accuracy ilora_s >= ilora - 0.5pt in every seed",
                            worst_gap >= -0.005, worst_gap, -0.005, "worst per-seed gap"});
  const double med_s = median(acc[Method::kIloraS]);
  const double med_b = median(acc[Method::kIlora]);
  out.push_back(CheckResult{"drift", "median held-out accuracy: ilora_s > ilora", med_s > med_b,
                            med_s - med_b, 0.0, ""});
  out.push_back(at_most("drift", "runtime seconds", seconds_since(t0), 120.0));
  return out;
}

Checks suite_convergence() {
  double worst = 1e300;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ExperimentSpec s = small_spec(Method::kIlora);
    apply_seed(s, seed);
    s.federation.dirichlet_alpha = 1e6;
    const Datasets ds = make_datasets(s.data);
    const auto metrics = run_federation(s.federation, ds.train, ds.heldout);
    std::size_t steps = 0;
    for (const auto& m : metrics) steps += m.local_steps;
    const CentralizedResult central =
        train_centralized(s.federation, *ds.train, *ds.heldout, steps);
    const double ratio = metrics.back().heldout_accuracy / central.heldout_accuracy;
    if (ratio < worst) {
      worst = ratio;
      char buf[96];
      std::snprintf(buf, sizeof buf, "seed %llu: %.4f vs centralized %.4f",
                    static_cast<unsigned long long>(seed), metrics.back().heldout_accuracy,
                    central.heldout_accuracy);
      detail = buf;
    }
  }
  return {CheckResult{"convergence", "IID ilora / centralized held-out accuracy (worst of 5 seeds)",
                      worst >= 0.95, worst, 0.95, detail}};
}

// Bytes for a full-participation round at equal ranks, written out per method.
CommBytes expected_bytes(Method m, std::uint64_t S, std::uint64_t r, std::uint64_t rs,
                         std::uint64_t d, std::uint64_t k) {
  const std::uint64_t w = d + k;
  switch (m) {
    case Method::kIlora: return {8 * S * rs * w, 8 * S * r * w};
    case Method::kIloraS: return {8 * S * 2 * rs * w, 8 * S * 2 * r * w};
    case Method::kFeditAvg:
    case Method::kZeroPad: return {8 * S * r * w, 8 * S * r * w};
    case Method::kFullStack: return {8 * S * S * r * w, 8 * S * r * w};
  }
  return {};
}

Checks suite_communication() {
  struct Point {
    std::size_t S, r, rs, d, k;
  };
  const Point grid[] = {{2, 2, 4, 6, 8}, {4, 3, 5, 8, 16}, {6, 1, 3, 12, 20}};
  std::size_t mismatches = 0;
  std::size_t ratio_failures = 0;
  std::size_t compared = 0;
  for (const Point& p : grid) {
    std::map<Method, std::uint64_t> down;
    for (Method m : {Method::kIlora, Method::kIloraS, Method::kFeditAvg, Method::kZeroPad,
                     Method::kFullStack}) {
      ExperimentSpec s = small_spec(m);
      s.federation.n_clients = p.S;
      s.federation.client_ranks = {p.r};
      s.federation.server_rank = p.rs;
      s.federation.rounds = 2;
      s.data.n_classes = p.d;
      s.data.input_dim = p.k;
      s.data.samples_per_class = 10;
      const CommBytes want = expected_bytes(m, p.S, p.r, p.rs, p.d, p.k);
      for (const RoundMetrics& rm : run_experiment(s)) {
        ++compared;
        mismatches += rm.bytes_down != want.down || rm.bytes_up != want.up;
        down[m] = rm.bytes_down;
      }
    }
    // full_stack / ilora downlink == S·r / r_s, compared in integers
    ratio_failures += down[Method::kFullStack] * p.rs != down[Method::kIlora] * p.S * p.r;
  }
  return {at_most("communication",
                  "measured vs analytic bytes, 5 methods x 3 grid points (" +
                      std::to_string(compared) + " rounds): mismatches",
                  static_cast<double>(mismatches), 0.0),
          at_most("communication", "full_stack/ilora downlink != S*r/r_s: grid points",
                  static_cast<double>(ratio_failures), 0.0)};
}

const std::vector<std::pair<std::string, Checks (*)()>>& suites() {
  static const std::vector<std::pair<std::string, Checks (*)()>> table = {
      {"exactness", suite_exactness},     {"truncation", suite_truncation},
      {"bias", suite_bias},               {"subspace", suite_subspace},
      {"gradients", suite_gradients},     {"equivalence", suite_equivalence},
      {"drift", suite_drift},             {"convergence", suite_convergence},
      {"communication", suite_communication},
  };
  return table;
}

}  // namespace

std::vector<std::string> suite_names() {
  std::vector<std::string> out;
  for (const auto& [name, fn] : suites()) out.push_back(name);
  out.emplace_back("all");
  return out;
}

std::vector<CheckResult> run_verify(std::string_view suite) {
  Checks out;
  for (const auto& [name, fn] : suites()) {
    if (suite == "all" || suite == name) {
      Checks part = fn();
      out.insert(out.end(), part.begin(), part.end());
    }
  }
  if (out.empty()) throw UnknownSuiteError("unknown suite '" + std::string(suite) + "'");
  return out;
}

std::string format_check(const CheckResult& c) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g (limit %.6g)", c.measured, c.threshold);
  std::string line = std::string(c.passed ? "PASS" : "FAIL") + "  " + c.suite + ": " + c.name +
                     "  measured " + buf;
  if (!c.detail.empty()) line += "  [" + c.detail + "]";
  return line;
}

}  // namespace ilora
