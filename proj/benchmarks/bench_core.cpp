#include "optomech2d/backaction.hpp"
#include "optomech2d/dynamics.hpp"
#include "optomech2d/reconstruct.hpp"
#include "optomech2d/spectral.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace optomech2d;

static void BM_LangevinFree(benchmark::State& state) {
    const auto p = desk_device();
    LangevinOptions o{.dt = max_time_step(p), .duration = 1.0, .seed = 1, .decimation = 20};
    const auto steps = static_cast<std::int64_t>(o.duration / o.dt);
    for (auto _ : state) benchmark::DoNotOptimize(simulate_langevin(p, nullptr, {}, 0.0, Environment{}, o));
    state.SetItemsProcessed(state.iterations() * steps);
}
BENCHMARK(BM_LangevinFree)->Unit(benchmark::kMillisecond);

static void BM_LangevinGaussianField(benchmark::State& state) {
    const auto p = desk_device();
    const ForceField f(GaussianBeamField::preset_532nm());
    LangevinOptions o{.dt = max_time_step(p), .duration = 1.0, .seed = 1, .decimation = 20};
    const auto steps = static_cast<std::int64_t>(o.duration / o.dt);
    for (auto _ : state)
        benchmark::DoNotOptimize(simulate_langevin(p, &f, {0.2e-6, 0.1e-6}, 100e-6, Environment{}, o));
    state.SetItemsProcessed(state.iterations() * steps);
}
BENCHMARK(BM_LangevinGaussianField)->Unit(benchmark::kMillisecond);

static void BM_Welch(benchmark::State& state) {
    const auto L = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n;
    std::vector<double> x(64 * L);
    for (auto& v : x) v = n(rng);
    for (auto _ : state) benchmark::DoNotOptimize(welch_psd(x, 1e-3, L));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(x.size()));
}
BENCHMARK(BM_Welch)->Arg(1 << 10)->Arg(1 << 14)->Unit(benchmark::kMillisecond);

static void BM_ExactModes(benchmark::State& state) {
    const auto p = reference_device();
    const auto K = effective_stiffness(p, {1e-9, 2e-9, -3e-9, 5e-10});
    for (auto _ : state) benchmark::DoNotOptimize(exact_modes(p, K));
}
BENCHMARK(BM_ExactModes);

static void BM_StabilityMap(benchmark::State& state) {
    const auto p = reference_device();
    const ForceField f(GaussianBeamField::preset_532nm());
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto grid = RectGrid::uniform(-0.8e-6, 0.8e-6, n, -1.5e-6, 1.5e-6, n);
    for (auto _ : state) benchmark::DoNotOptimize(stability_map(p, f, grid, 250e-6));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(grid.size()));
}
BENCHMARK(BM_StabilityMap)->Arg(20)->Arg(60)->Unit(benchmark::kMillisecond);

static void BM_FitForce(benchmark::State& state) {
    const auto p = reference_device();
    const auto w = response_frequency_grid(p);
    const MeasurementVector beta{{1e6, 2e5}, {}};
    const auto s = driven_response_analytic(p, beta.direction(), {3e-15, -1e-15}, 0.0, w);
    for (auto _ : state) benchmark::DoNotOptimize(fit_force(s, p, beta));
}
BENCHMARK(BM_FitForce);
BENCHMARK_MAIN();
