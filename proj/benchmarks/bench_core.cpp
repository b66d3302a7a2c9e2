#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "acof/bayesopt.hpp"
#include "acof/evaluators.hpp"
#include "acof/metrics.hpp"
#include "acof/rng.hpp"

using namespace acof;

namespace {

ParameterSpace unit_space(std::size_t d) {
  std::vector<ParameterSpec> ps;
  for (std::size_t i = 0; i < d; ++i) ps.push_back({"p" + std::to_string(i), 0.0, 1.0, "", Scale::linear});
  return ParameterSpace(std::move(ps));
}

std::vector<bo::Observation> observations(std::size_t n, std::size_t d) {
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<bo::Observation> obs(n);
  for (auto& o : obs) {
    o.z.resize(d);
    double s = 0.0;
    for (auto& v : o.z) s += (v = u(gen)) - 0.5;
    o.value = -s * s;
  }
  return obs;
}

}  // namespace

static void BM_GpFit(benchmark::State& state) {
  const auto obs = observations(static_cast<std::size_t>(state.range(0)), 12);
  for (auto _ : state) benchmark::DoNotOptimize(bo::GpModel::fit(obs));
}
BENCHMARK(BM_GpFit)->Arg(50)->Arg(200)->Arg(500)->Unit(benchmark::kMillisecond);

static void BM_ProposeBatch(benchmark::State& state) {
  const auto space = unit_space(12);
  const auto model = bo::GpModel::fit(observations(300, 12));
  bo::AcquisitionParams params;
  params.pool_size = static_cast<std::size_t>(state.range(0));
  RandomStream rng(7, "bench");
  for (auto _ : state) {
    benchmark::DoNotOptimize(bo::propose_batch(model, space.full_region(), space, params, rng));
  }
}
BENCHMARK(BM_ProposeBatch)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

static void BM_Hdbscan(benchmark::State& state) {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<double>> pts(static_cast<std::size_t>(state.range(0)), std::vector<double>(6));
  for (auto& p : pts) for (auto& v : p) v = u(gen);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::hdbscan(pts, {10, 5}));
}
BENCHMARK(BM_Hdbscan)->Arg(100)->Arg(500)->Unit(benchmark::kMillisecond);

static void BM_SyntheticOpamp(benchmark::State& state) {
  std::vector<ParameterSpec> ps;
  for (int i = 0; i < 6; ++i) ps.push_back({"w" + std::to_string(i), 1e-6, 50e-6, "m", Scale::log});
  const ParameterSpace space(std::move(ps));
  const eval::SyntheticOpamp opamp(space);
  const DesignPoint x{{5e-6, 8e-6, 12e-6, 3e-6, 20e-6, 9e-6}};
  for (auto _ : state) benchmark::DoNotOptimize(opamp.run(x));
}
BENCHMARK(BM_SyntheticOpamp);
BENCHMARK_MAIN();
