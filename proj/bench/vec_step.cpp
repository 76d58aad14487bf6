// OpenMP vec step against the serial reference, per env and agent count.

#include <benchmark/benchmark.h>

#include <random>

#include "ragmark/vec_scene.hpp"

using namespace ragmark;

namespace {

void BM_VecStep(benchmark::State& state, EnvId id, bool serial) {
  const int agents = static_cast<int>(state.range(0));
  VecScene scene(make_env_spec(id), agents, 5);
  scene.reset(1);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> actions(size_t(agents) * scene.act_dim());
  for (auto& a : actions) a = u(rng);
  for (auto _ : state) {
    BatchTransition t = serial ? scene.step_serial(actions) : scene.step(actions);
    benchmark::DoNotOptimize(t.rewards.data());
  }
  state.counters["agent_steps/s"] =
      benchmark::Counter(static_cast<double>(state.iterations()) * agents, benchmark::Counter::kIsRate);
  state.counters["threads"] = scene.threads();
}

}  // namespace

BENCHMARK_CAPTURE(BM_VecStep, hopper_omp, EnvId::Hopper, false)->Arg(16)->Arg(64)->UseRealTime();
BENCHMARK_CAPTURE(BM_VecStep, hopper_serial, EnvId::Hopper, true)->Arg(16)->Arg(64)->UseRealTime();
BENCHMARK_CAPTURE(BM_VecStep, walker2d_omp, EnvId::Walker2d, false)->Arg(16)->UseRealTime();
BENCHMARK_CAPTURE(BM_VecStep, walker2d_serial, EnvId::Walker2d, true)->Arg(16)->UseRealTime();
BENCHMARK_CAPTURE(BM_VecStep, humanoid_omp, EnvId::Humanoid, false)->Arg(16)->UseRealTime();
BENCHMARK_CAPTURE(BM_VecStep, humanoid_serial, EnvId::Humanoid, true)->Arg(16)->UseRealTime();

BENCHMARK_MAIN();
