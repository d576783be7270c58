#include "pep/harness.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace pep;

namespace {

Matrix random_inputs(Index n, int D, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    Matrix X(n, D);
    for (Index i = 0; i < n; ++i)
        for (int d = 0; d < D; ++d) X(i, d) = n01(rng);
    return X;
}

void BM_GramSerial(benchmark::State& state) {
    const Index N = state.range(0);
    const Matrix X = random_inputs(N, 5, 1), Z = random_inputs(200, 5, 2);
    const KernelHyper h = KernelHyper::isotropic(5, 1.0, 1.0, 0.1);
    for (auto _ : state) benchmark::DoNotOptimize(serial::gram(Z, X, h));
    state.SetItemsProcessed(state.iterations() * N * 200);
}

void BM_GramParallel(benchmark::State& state) {
    const Index N = state.range(0);
    const Matrix X = random_inputs(N, 5, 1), Z = random_inputs(200, 5, 2);
    const KernelHyper h = KernelHyper::isotropic(5, 1.0, 1.0, 0.1);
    for (auto _ : state) benchmark::DoNotOptimize(gram(Z, X, h));
    state.SetItemsProcessed(state.iterations() * N * 200);
}

void BM_GramVjp(benchmark::State& state) {
    const Index N = state.range(0);
    const Matrix X = random_inputs(N, 5, 1), Z = random_inputs(100, 5, 2);
    const KernelHyper h = KernelHyper::isotropic(5, 1.0, 1.0, 0.1);
    const Matrix K = gram(Z, X, h);
    const Matrix G = Matrix::Ones(100, N);
    for (auto _ : state) {
        Vector gl = Vector::Zero(5);
        double gs = 0.0;
        Matrix gZ = Matrix::Zero(100, 5);
        gram_vjp(Z, X, K, G, h, gl, gs, &gZ);
        benchmark::DoNotOptimize(gZ.data());
    }
}

void BM_RegressionObjective(benchmark::State& state) {
    const Index N = state.range(0), M = state.range(1);
    const Dataset ds = synth_gen(N, 5, KernelHyper::isotropic(5, 1.0, 1.0, 0.05), 3);
    const TrainableParams p = initial_params(ds.X, ds.y, M, 4);
    const BlockPartition part = BlockPartition::singletons(N, 0.5);
    for (auto _ : state) benchmark::DoNotOptimize(regression_objective_grads(p, ds.X, ds.y, part).value);
}

void BM_ProbitSweep(benchmark::State& state) {
    const Index N = state.range(0);
    const Matrix X = random_inputs(N, 2, 5), Z = random_inputs(50, 2, 6);
    Vector y(N);
    for (Index i = 0; i < N; ++i) y(i) = X(i, 0) > 0 ? 1.0 : -1.0;
    const KernelHyper h = KernelHyper::isotropic(2, 1.0, 1.0, 0.1);
    const LowRankSystem sys = LowRankSystem::build(X, Z, h);
    PEPConfig cfg;
    cfg.alpha = 0.5;
    cfg.parallel_updates = state.range(1) != 0;
    for (auto _ : state) {
        InitialState s = init_state(50, N);
        benchmark::DoNotOptimize(sweep(sys, s.state, s.sites, y, ProbitLik(), cfg).max_change);
    }
}

}  // namespace

BENCHMARK(BM_GramSerial)->Arg(1000)->Arg(4000);
BENCHMARK(BM_GramParallel)->Arg(1000)->Arg(4000);
BENCHMARK(BM_GramVjp)->Arg(1000)->Arg(4000);
BENCHMARK(BM_RegressionObjective)->Args({1000, 50})->Args({1000, 200});
BENCHMARK(BM_ProbitSweep)->Args({1000, 0})->Args({1000, 1});

BENCHMARK_MAIN();
