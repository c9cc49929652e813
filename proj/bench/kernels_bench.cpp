// Serial reference vs OpenMP kernels on desk-model shapes.

#include <benchmark/benchmark.h>

#include <vector>

#include "spinterp/common.hpp"
#include "spinterp/nn/kernels.hpp"

using namespace spinterp;
using namespace spinterp::nn::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

template <auto Fn>
void bm_matmul(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const MatmulShape s{n, n, n, false, false, false};
    const auto a = random_vec(static_cast<std::size_t>(n) * n, 1), b = random_vec(static_cast<std::size_t>(n) * n, 2);
    std::vector<double> c(static_cast<std::size_t>(n) * n);
    for (auto _ : state) {
        Fn(a, b, c, s);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}

// First encoder block: 8 spectrograms 64x64, 1 -> 8 channels, stride 2.
const ConvShape kConv{8, 1, 64, 64, 8, 3, 2, 1};
const ConvShape kConvDeep{8, 16, 16, 16, 32, 3, 1, 1};

template <auto Fn>
void bm_conv_forward(benchmark::State& state) {
    const ConvShape s = state.range(0) == 0 ? kConv : kConvDeep;
    const auto x = random_vec(static_cast<std::size_t>(s.batch) * s.in_ch * s.in_h * s.in_w, 3);
    const auto w = random_vec(static_cast<std::size_t>(s.out_ch) * s.in_ch * 9, 4);
    const auto bias = random_vec(s.out_ch, 5);
    std::vector<double> out(static_cast<std::size_t>(s.batch) * s.out_ch * s.out_h() * s.out_w());
    for (auto _ : state) {
        Fn(x, w, bias, out, s);
        benchmark::DoNotOptimize(out.data());
    }
}

template <auto Fn>
void bm_conv_backward_weight(benchmark::State& state) {
    const ConvShape s = state.range(0) == 0 ? kConv : kConvDeep;
    const auto x = random_vec(static_cast<std::size_t>(s.batch) * s.in_ch * s.in_h * s.in_w, 3);
    const auto g = random_vec(static_cast<std::size_t>(s.batch) * s.out_ch * s.out_h() * s.out_w(), 6);
    std::vector<double> gw(static_cast<std::size_t>(s.out_ch) * s.in_ch * 9), gb(s.out_ch);
    for (auto _ : state) {
        Fn(g, x, gw, gb, s);
        benchmark::DoNotOptimize(gw.data());
    }
}

}  // namespace

BENCHMARK(bm_matmul<serial::matmul>)->Name("matmul/serial")->Arg(64)->Arg(256);
BENCHMARK(bm_matmul<parallel::matmul>)->Name("matmul/parallel")->Arg(64)->Arg(256);
BENCHMARK(bm_conv_forward<serial::conv2d_forward>)->Name("conv_forward/serial")->Arg(0)->Arg(1);
BENCHMARK(bm_conv_forward<parallel::conv2d_forward>)->Name("conv_forward/parallel")->Arg(0)->Arg(1);
BENCHMARK(bm_conv_backward_weight<serial::conv2d_backward_weight>)->Name("conv_backward_weight/serial")->Arg(0)->Arg(1);
BENCHMARK(bm_conv_backward_weight<parallel::conv2d_backward_weight>)->Name("conv_backward_weight/parallel")->Arg(0)->Arg(1);

BENCHMARK_MAIN();
