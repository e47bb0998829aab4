#include <benchmark/benchmark.h>

#include "ilora/experiments.hpp"
#include "ilora/random.hpp"

namespace {

ilora::Matrix random(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  ilora::Rng rng = ilora::make_rng({seed});
  return ilora::gaussian_matrix(rows, cols, rng);
}

void BM_MatmulParallel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const ilora::Matrix a = random(n, n, 1), b = random(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(ilora::matmul(a, b));
  state.SetComplexityN(state.range(0));
}

void BM_MatmulReference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const ilora::Matrix a = random(n, n, 1), b = random(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(ilora::matmul_reference(a, b));
  state.SetComplexityN(state.range(0));
}

void BM_ThinQr(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const ilora::Matrix m = random(n, n / 2, 3);
  for (auto _ : state) benchmark::DoNotOptimize(ilora::thin_qr(m));
}

void BM_QrCompress(benchmark::State& state) {
  const ilora::Matrix delta = random(64, 128, 4);
  for (auto _ : state) benchmark::DoNotOptimize(ilora::qr_compress(delta, 16));
}

void run_rounds(benchmark::State& state, bool parallel) {
  ilora::ExperimentSpec s = ilora::preset("canonical");
  s.federation.method = ilora::Method::kIloraS;
  s.federation.n_clients = static_cast<std::size_t>(state.range(0));
  s.federation.rounds = 1000000;
  s.data.samples_per_class = 20 * s.federation.n_clients;
  const ilora::Datasets ds = ilora::make_datasets(s.data);
  ilora::Federation fed = ilora::init_federation(s.federation, ds.train, ds.heldout);
  for (auto _ : state) benchmark::DoNotOptimize(ilora::run_round(fed, {parallel, std::nullopt}));
}

void BM_RoundParallel(benchmark::State& state) { run_rounds(state, true); }
void BM_RoundSerial(benchmark::State& state) { run_rounds(state, false); }

}  // namespace

BENCHMARK(BM_MatmulParallel)->RangeMultiplier(2)->Range(32, 256)->Complexity();
BENCHMARK(BM_MatmulReference)->RangeMultiplier(2)->Range(32, 256)->Complexity();
BENCHMARK(BM_ThinQr)->Arg(32)->Arg(128);
BENCHMARK(BM_QrCompress);
BENCHMARK(BM_RoundParallel)->Arg(4)->Arg(16);
BENCHMARK(BM_RoundSerial)->Arg(4)->Arg(16);

BENCHMARK_MAIN();
