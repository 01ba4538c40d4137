#include "olab/linalg.hpp"
#include "olab/metrics.hpp"
#include "olab/ops.hpp"
#include "olab/rng.hpp"

#include <benchmark/benchmark.h>

namespace {

olab::Tensor random_matrix(std::size_t n, std::size_t d, std::uint64_t seed) {
    olab::Rng rng(seed);
    olab::Tensor x(n, d);
    for (std::size_t i = 0; i < x.size(); ++i) x(i) = rng.normal();
    return x;
}

void bm_matmul(benchmark::State &state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const olab::Tensor a = random_matrix(n, n, 1);
    const olab::Tensor b = random_matrix(n, n, 2);
    for (auto _ : state) {
        benchmark::DoNotOptimize(olab::matmul(a, b));
    }
    state.SetItemsProcessed(static_cast<long>(state.iterations()) *
                            static_cast<long>(2 * n * n * n));
}
BENCHMARK(bm_matmul)->Arg(64)->Arg(128)->Arg(256);

void bm_sym_eig(benchmark::State &state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    olab::Tensor a = random_matrix(n, n, 3);
    olab::Tensor s = olab::matmul_tn(a, a);
    for (auto _ : state) {
        benchmark::DoNotOptimize(olab::sym_eig(s));
    }
}
BENCHMARK(bm_sym_eig)->Arg(16)->Arg(64)->Arg(128);

void bm_kurtosis(benchmark::State &state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const olab::Tensor x = random_matrix(n, 64, 4);
    for (auto _ : state) {
        benchmark::DoNotOptimize(olab::kurtosis(x));
    }
}
BENCHMARK(bm_kurtosis)->Arg(256)->Arg(2048);

void bm_sigprop(benchmark::State &state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const olab::Tensor x = random_matrix(n, 64, 5);
    for (auto _ : state) {
        benchmark::DoNotOptimize(olab::sigprop(x));
    }
}
BENCHMARK(bm_sigprop)->Arg(256)->Arg(1024);

} // namespace

BENCHMARK_MAIN();
