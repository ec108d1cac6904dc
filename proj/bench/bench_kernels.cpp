// Parallel kernels vs their serial reference implementations.

#include <benchmark/benchmark.h>

#include <random>

#include "hre/kernels.hpp"
#include "hre/metrics.hpp"
#include "hre/runtime.hpp"
#include "hre/util.hpp"
#include "hre_ref.hpp"

using namespace hre;

namespace {

LogitMatrix random_logits(std::uint32_t n, std::uint32_t k, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    LogitMatrix m(n, k);
    for (float& v : m.values) v = static_cast<float>(2.0 * rng_normal(rng));
    return m;
}

runtime::ToyModel random_mlp(std::uint32_t d, std::uint32_t h, std::uint32_t k,
                             std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    runtime::ToyModel m;
    m.kind = runtime::ModelKind::Mlp;
    m.input_dim = d;
    m.hidden_dim = h;
    m.num_classes = k;
    m.w1.resize(static_cast<std::size_t>(h) * d);
    m.b1.resize(h);
    m.w2.resize(static_cast<std::size_t>(k) * h);
    m.b2.resize(k);
    for (auto& v : m.w1) v = rng_normal(rng);
    for (auto& v : m.b1) v = 0.1 * rng_normal(rng);
    for (auto& v : m.w2) v = rng_normal(rng);
    for (auto& v : m.b2) v = 0.1 * rng_normal(rng);
    return m;
}

void bench_confidence_parallel(benchmark::State& state) {
    const auto logits = random_logits(static_cast<std::uint32_t>(state.range(0)), 16, 1);
    for (auto _ : state)
        benchmark::DoNotOptimize(kernels::batch_confidence(logits, 1.0));
}

void bench_confidence_serial(benchmark::State& state) {
    const auto logits = random_logits(static_cast<std::uint32_t>(state.range(0)), 16, 1);
    for (auto _ : state)
        benchmark::DoNotOptimize(ref::confidences_serial(logits, 1.0));
}

void bench_auroc_rank(benchmark::State& state) {
    std::mt19937_64 rng(2);
    const auto n = static_cast<std::size_t>(state.range(0));
    std::vector<double> id(n), ood(n);
    for (auto& v : id) v = rng_normal(rng) + 0.5;
    for (auto& v : ood) v = rng_normal(rng);
    for (auto _ : state) benchmark::DoNotOptimize(metrics::auroc(id, ood));
}

void bench_auroc_pairwise(benchmark::State& state) {
    std::mt19937_64 rng(2);
    const auto n = static_cast<std::size_t>(state.range(0));
    std::vector<double> id(n), ood(n);
    for (auto& v : id) v = rng_normal(rng) + 0.5;
    for (auto& v : ood) v = rng_normal(rng);
    for (auto _ : state) benchmark::DoNotOptimize(ref::auroc_pairwise(id, ood));
}

void bench_attack_parallel(benchmark::State& state) {
    const auto model = random_mlp(16, 32, 4, 3);
    std::mt19937_64 rng(4);
    DMatrix inputs(static_cast<std::size_t>(state.range(0)), 16);
    std::vector<std::int32_t> labels(inputs.rows);
    for (auto& v : inputs.values) v = 0.05 * rng_normal(rng);
    for (auto& l : labels) l = static_cast<std::int32_t>(rng_below(rng, 4));
    runtime::AttackConfig config;
    config.steps = 10;
    for (auto _ : state)
        benchmark::DoNotOptimize(runtime::attack_batch(model, inputs, labels, config));
}

void bench_attack_serial(benchmark::State& state) {
    const auto model = random_mlp(16, 32, 4, 3);
    std::mt19937_64 rng(4);
    DMatrix inputs(static_cast<std::size_t>(state.range(0)), 16);
    std::vector<std::int32_t> labels(inputs.rows);
    for (auto& v : inputs.values) v = 0.05 * rng_normal(rng);
    for (auto& l : labels) l = static_cast<std::int32_t>(rng_below(rng, 4));
    runtime::AttackConfig config;
    config.steps = 10;
    config.random_start = false;
    for (auto _ : state)
        benchmark::DoNotOptimize(ref::attack_serial(model, inputs, labels, config));
}

void bench_forward_parallel(benchmark::State& state) {
    const auto model = random_mlp(16, 64, 8, 5);
    std::mt19937_64 rng(6);
    DMatrix inputs(static_cast<std::size_t>(state.range(0)), 16);
    for (auto& v : inputs.values) v = rng_normal(rng);
    for (auto _ : state) benchmark::DoNotOptimize(model.forward(inputs));
}

void bench_forward_serial(benchmark::State& state) {
    const auto model = random_mlp(16, 64, 8, 5);
    std::mt19937_64 rng(6);
    DMatrix inputs(static_cast<std::size_t>(state.range(0)), 16);
    for (auto& v : inputs.values) v = rng_normal(rng);
    for (auto _ : state) benchmark::DoNotOptimize(ref::forward_serial(model, inputs));
}

} // namespace

BENCHMARK(bench_confidence_parallel)->Arg(1 << 14)->Arg(1 << 18);
BENCHMARK(bench_confidence_serial)->Arg(1 << 14)->Arg(1 << 18);
BENCHMARK(bench_auroc_rank)->Arg(1 << 10)->Arg(1 << 13);
BENCHMARK(bench_auroc_pairwise)->Arg(1 << 10)->Arg(1 << 13);
BENCHMARK(bench_attack_parallel)->Arg(256)->Arg(1024);
BENCHMARK(bench_attack_serial)->Arg(256)->Arg(1024);
BENCHMARK(bench_forward_parallel)->Arg(1 << 12)->Arg(1 << 15);
BENCHMARK(bench_forward_serial)->Arg(1 << 12)->Arg(1 << 15);

BENCHMARK_MAIN();
