#include <benchmark/benchmark.h>

#include <filesystem>

#include <unistd.h>

#include "robochain/simnet.hpp"

using namespace robochain;

static void BM_DefaultScenario(benchmark::State& state) {
  const auto out = std::filesystem::temp_directory_path() / ("robochain-bench-" + std::to_string(::getpid()));
  auto config = simnet::ScenarioConfig::defaults();
  config.num_hubs = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    state.PauseTiming();
    std::filesystem::remove_all(out);
    state.ResumeTiming();
    benchmark::DoNotOptimize(simnet::run_scenario(config, out));
  }
  std::filesystem::remove_all(out);
}
BENCHMARK(BM_DefaultScenario)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);
