// Serial-vs-OpenMP comparison of the hot kernels at the shapes the training
// and probing paths actually use. Run: ./anl_bench [--benchmark_filter=...]

#include <benchmark/benchmark.h>

#include <vector>

#include "anl/attention.hpp"
#include "anl/kernels.hpp"
#include "anl/noise_probe.hpp"
#include "anl/rng.hpp"
#include "anl/tensor.hpp"

using namespace anl;
using kernels::ConvShape;
using kernels::Exec;

namespace {

Tensor random_tensor(std::vector<int> shape, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.gaussian();
    return t;
}

void bench_conv_forward(benchmark::State& state, Exec e) {
    ConvShape s{32, 8, 32, 32, 8, 3, 1, 1};
    Tensor in = random_tensor({s.n, s.in_c, s.in_h, s.in_w}, 1);
    Tensor w = random_tensor({s.out_c, s.in_c, s.k, s.k}, 2);
    Tensor b = random_tensor({s.out_c}, 3);
    Tensor out({s.n, s.out_c, s.out_h(), s.out_w()});
    for (auto _ : state) {
        kernels::conv2d_forward(in.data(), w.data(), b.data(), out.data(), s, e);
        benchmark::DoNotOptimize(out.data());
    }
    const double flops = 2.0 * s.n * s.out_c * s.out_h() * s.out_w() * s.in_c * s.k * s.k;
    state.counters["GFLOP/s"] =
        benchmark::Counter(flops * 1e-9, benchmark::Counter::kIsIterationInvariantRate);
}

void bench_conv_backward(benchmark::State& state, Exec e) {
    ConvShape s{32, 8, 32, 32, 8, 3, 1, 1};
    Tensor in = random_tensor({s.n, s.in_c, s.in_h, s.in_w}, 1);
    Tensor w = random_tensor({s.out_c, s.in_c, s.k, s.k}, 2);
    Tensor gout = random_tensor({s.n, s.out_c, s.out_h(), s.out_w()}, 4);
    Tensor gin(in.shape()), gw(w.shape()), gb({s.out_c});
    for (auto _ : state) {
        gw.fill(0.0);
        gb.fill(0.0);
        kernels::conv2d_backward_input(gout.data(), w.data(), gin.data(), s, e);
        kernels::conv2d_backward_params(in.data(), gout.data(), gw.data(), gb.data(), s, e);
        benchmark::DoNotOptimize(gin.data());
    }
}

void bench_dft2d(benchmark::State& state, Exec e) {
    const int hw = static_cast<int>(state.range(0));
    Tensor f = random_tensor({hw, hw}, 5);
    std::vector<double> re(static_cast<std::size_t>(hw) * hw), im(re.size());
    for (auto _ : state) {
        kernels::dft2d(f.data(), re.data(), im.data(), hw, hw, e);
        benchmark::DoNotOptimize(re.data());
    }
}

void bench_attention(benchmark::State& state, Exec e) {
    kernels::set_default_exec(e);
    PredictedNoise noise;
    noise.values = random_tensor({3, 256, 256}, 6);
    noise.timestep = 1;
    for (auto _ : state) {
        AttentionMap a = build_attention(noise);
        AttentionMap r = resize_attention(a, 8, 8);
        benchmark::DoNotOptimize(r.weights.data());
    }
    kernels::set_default_exec(Exec::Parallel);
}

}  // namespace

BENCHMARK_CAPTURE(bench_conv_forward, serial, Exec::Serial)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(bench_conv_forward, openmp, Exec::Parallel)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(bench_conv_backward, serial, Exec::Serial)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(bench_conv_backward, openmp, Exec::Parallel)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(bench_dft2d, serial, Exec::Serial)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(bench_dft2d, openmp, Exec::Parallel)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(bench_attention, serial, Exec::Serial)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(bench_attention, openmp, Exec::Parallel)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
