#include <benchmark/benchmark.h>

#include <vector>

#include "cavm/kernels.hpp"
#include "cavm/random.hpp"

using namespace cavm;
using kernels::ConvGeometry;

namespace {

std::vector<float> noise(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    return v;
}

// Shapes taken from the toy codec: the stride-2 encoder stages at 64x64 and the
// 3x3 refinement convs further down.
ConvGeometry geometry(const benchmark::State& state) {
    ConvGeometry g;
    g.in_channels = static_cast<std::size_t>(state.range(0));
    g.out_channels = static_cast<std::size_t>(state.range(1));
    g.in_h = g.in_w = static_cast<std::size_t>(state.range(2));
    g.kernel_h = g.kernel_w = 3;
    g.stride = static_cast<std::size_t>(state.range(3));
    g.pad = 1;
    return g;
}

void conv_args(benchmark::internal::Benchmark* b) {
    b->Args({4, 16, 64, 2})->Args({16, 16, 32, 1})->Args({24, 48, 8, 1})->Args({48, 32, 16, 1});
}

template <bool Reference>
void BM_ConvForward(benchmark::State& state) {
    const ConvGeometry g = geometry(state);
    const auto in = noise(g.in_channels * g.in_h * g.in_w, 1);
    const auto w = noise(g.out_channels * g.in_channels * 9, 2);
    const auto bias = noise(g.out_channels, 3);
    std::vector<float> out(g.out_channels * g.out_h() * g.out_w());
    for (auto _ : state) {
        if constexpr (Reference)
            kernels::reference::conv2d_forward<float>(g, in, w, bias, out);
        else
            kernels::conv2d_forward<float>(g, in, w, bias, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.counters["MAC/s"] = benchmark::Counter(
        static_cast<double>(out.size() * g.in_channels * 9), benchmark::Counter::kIsIterationInvariantRate);
}

template <bool Reference>
void BM_ConvBackward(benchmark::State& state) {
    const ConvGeometry g = geometry(state);
    const auto in = noise(g.in_channels * g.in_h * g.in_w, 1);
    const auto w = noise(g.out_channels * g.in_channels * 9, 2);
    const auto dout = noise(g.out_channels * g.out_h() * g.out_w(), 3);
    std::vector<float> din(in.size()), dw(w.size()), db(g.out_channels);
    for (auto _ : state) {
        if constexpr (Reference) {
            kernels::reference::conv2d_backward_input<float>(g, dout, w, din);
            kernels::reference::conv2d_backward_weight<float>(g, dout, in, dw, db);
        } else {
            kernels::conv2d_backward_input<float>(g, dout, w, din);
            kernels::conv2d_backward_weight<float>(g, dout, in, dw, db);
        }
        benchmark::DoNotOptimize(din.data());
        benchmark::DoNotOptimize(dw.data());
    }
}

template <bool Reference>
void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = noise(n * n, 1), b = noise(n * n, 2);
    std::vector<float> c(n * n);
    for (auto _ : state) {
        if constexpr (Reference)
            kernels::reference::matmul<float>(a, b, c, n, n, n);
        else
            kernels::matmul<float>(a, b, c, n, n, n);
        benchmark::DoNotOptimize(c.data());
    }
    state.counters["MAC/s"] =
        benchmark::Counter(static_cast<double>(n * n * n), benchmark::Counter::kIsIterationInvariantRate);
}

} // namespace

BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/parallel")->Apply(conv_args);
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/reference")->Apply(conv_args);
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/parallel")->Apply(conv_args);
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/reference")->Apply(conv_args);
BENCHMARK(BM_Matmul<false>)->Name("matmul/parallel")->Arg(64)->Arg(192);
BENCHMARK(BM_Matmul<true>)->Name("matmul/reference")->Arg(64)->Arg(192);

BENCHMARK_MAIN();
