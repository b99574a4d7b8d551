// Serial reference kernels against their OpenMP versions. Each parallel
// benchmark takes the thread count as its argument.

#include <benchmark/benchmark.h>

#include <omp.h>

#include <random>

#include "surf/gof.hpp"
#include "surf/objective.hpp"
#include "surf/sampler.hpp"
#include "surf/synthetic.hpp"
#include "surf/trainer.hpp"

using namespace surf;

namespace {

struct Fixture {
  SurfModel model;
  Dataset data;
  std::vector<BatchItem> batch;

  Fixture() : model(config(), 1) {
    SyntheticSpec s = preset("spikes");
    s.trials = 64;
    const Dataset raw = generate_serial(s);
    model.set_t_scale(compute_t_scale(raw));
    data = to_model_units(model, raw);
    batch = batch_of(data);
  }

  static ModelConfig config() {
    ModelConfig c;
    c.encoder.d_hidden = 16;
    c.encoder.num_layers = 2;
    c.encoder.num_heads = 2;
    return c;
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_TotalLossSerial(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(total_loss_serial(f.model, f.batch, {}).loss.total);
}

void BM_TotalLoss(benchmark::State& state) {
  const auto& f = fixture();
  BatchOptions opt;
  opt.threads = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(total_loss(f.model, f.batch, {}, opt).loss.total);
}

void BM_EvaluateSerial(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_serial(f.model, f.data).gof.ks_D);
}

void BM_Evaluate(benchmark::State& state) {
  const auto& f = fixture();
  EvalOptions opt;
  opt.threads = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(f.model, f.data, opt).gof.ks_D);
}

SyntheticSpec hawkes_spec() {
  SyntheticSpec s = preset("hawkes");
  s.trials = 256;
  return s;
}

void BM_GenerateSerial(benchmark::State& state) {
  const SyntheticSpec s = hawkes_spec();
  for (auto _ : state) benchmark::DoNotOptimize(generate_serial(s).num_events());
}

void BM_Generate(benchmark::State& state) {
  const SyntheticSpec s = hawkes_spec();
  for (auto _ : state) benchmark::DoNotOptimize(generate(s, static_cast<int>(state.range(0))).num_events());
}

struct CensusInput {
  std::vector<std::unique_ptr<IntervalHazard>> owned;
  std::vector<const IntervalHazard*> hazards;
  std::vector<double> z;

  CensusInput() {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.0, 1.5);
    std::exponential_distribution<double> e(1.0);
    for (int i = 0; i < 20000; ++i) {
      std::vector<double> raw(36);
      for (double& x : raw) x = g(rng);
      owned.push_back(std::make_unique<CSBHazard>(CSBHazard::from_raw(raw, 1e-4)));
      hazards.push_back(owned.back().get());
      z.push_back(e(rng));
    }
  }
};

const CensusInput& census_input() {
  static const CensusInput c;
  return c;
}

void BM_CensusSerial(benchmark::State& state) {
  const auto& c = census_input();
  for (auto _ : state) benchmark::DoNotOptimize(inversion_census_serial(c.hazards, c.z).within_budget);
}

void BM_Census(benchmark::State& state) {
  const auto& c = census_input();
  for (auto _ : state)
    benchmark::DoNotOptimize(inversion_census(c.hazards, c.z, {}, static_cast<int>(state.range(0))).within_budget);
}

void thread_counts(benchmark::internal::Benchmark* b) {
  for (int t = 1; t <= std::max(1, omp_get_num_procs()); t *= 2) b->Arg(t);
}

}  // namespace

BENCHMARK(BM_TotalLossSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TotalLoss)->Apply(thread_counts)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_EvaluateSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Evaluate)->Apply(thread_counts)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_GenerateSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Generate)->Apply(thread_counts)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_CensusSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Census)->Apply(thread_counts)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
