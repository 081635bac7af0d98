// Serial-vs-parallel kernel timings. The parallel versions back the
// network's hot path; the serial ones are the reference implementations the
// unit tests compare against.
#include <benchmark/benchmark.h>

#include "pdp/core/kernels.hpp"
#include "pdp/core/rng.hpp"

namespace {

using pdp::kernels::ConvSpec;
using pdp::Rng;
using pdp::Tensor;

Tensor random_tensor(std::vector<int> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-1.0, 1.0);
    return t;
}

struct ConvCase {
    Tensor x, w, b;
    ConvSpec spec;
};

// (b, cin, h, w) -> cout, representative of the desk backbone interior.
ConvCase make_case(int batch, int cin, int cout, int hw, int k, int groups) {
    Rng rng(7);
    ConvCase c;
    c.x = random_tensor({batch, cin, hw, hw}, rng);
    c.w = random_tensor({cout, cin / groups, k, k}, rng);
    c.b = random_tensor({cout}, rng);
    c.spec = {k, 1, k / 2, groups};
    return c;
}

void BM_conv2d_serial(benchmark::State& state) {
    const ConvCase c = make_case(1, static_cast<int>(state.range(0)),
                                 static_cast<int>(state.range(0)),
                                 static_cast<int>(state.range(1)), 3, 1);
    for (auto _ : state) {
        benchmark::DoNotOptimize(pdp::kernels::conv2d_forward_serial(c.x, c.w, &c.b, c.spec));
    }
}

void BM_conv2d_parallel(benchmark::State& state) {
    const ConvCase c = make_case(1, static_cast<int>(state.range(0)),
                                 static_cast<int>(state.range(0)),
                                 static_cast<int>(state.range(1)), 3, 1);
    for (auto _ : state) {
        benchmark::DoNotOptimize(pdp::kernels::conv2d_forward_parallel(c.x, c.w, &c.b, c.spec));
    }
}

void BM_conv2d_grouped_serial(benchmark::State& state) {
    const ConvCase c = make_case(1, 64, 64, static_cast<int>(state.range(0)), 3, 2);
    for (auto _ : state) {
        benchmark::DoNotOptimize(pdp::kernels::conv2d_forward_serial(c.x, c.w, &c.b, c.spec));
    }
}

void BM_conv2d_grouped_parallel(benchmark::State& state) {
    const ConvCase c = make_case(1, 64, 64, static_cast<int>(state.range(0)), 3, 2);
    for (auto _ : state) {
        benchmark::DoNotOptimize(pdp::kernels::conv2d_forward_parallel(c.x, c.w, &c.b, c.spec));
    }
}

void BM_conv2d_backward_serial(benchmark::State& state) {
    const ConvCase c = make_case(1, static_cast<int>(state.range(0)),
                                 static_cast<int>(state.range(0)),
                                 static_cast<int>(state.range(1)), 3, 1);
    const Tensor y = pdp::kernels::conv2d_forward_serial(c.x, c.w, &c.b, c.spec);
    Rng rng(9);
    const Tensor gy = random_tensor(y.shape(), rng);
    for (auto _ : state) {
        Tensor gx, gw, gb;
        pdp::kernels::conv2d_backward_serial(c.x, c.w, c.spec, gy, gx, gw, &gb);
        benchmark::DoNotOptimize(gx);
    }
}

void BM_conv2d_backward_parallel(benchmark::State& state) {
    const ConvCase c = make_case(1, static_cast<int>(state.range(0)),
                                 static_cast<int>(state.range(0)),
                                 static_cast<int>(state.range(1)), 3, 1);
    const Tensor y = pdp::kernels::conv2d_forward_parallel(c.x, c.w, &c.b, c.spec);
    Rng rng(9);
    const Tensor gy = random_tensor(y.shape(), rng);
    for (auto _ : state) {
        Tensor gx, gw, gb;
        pdp::kernels::conv2d_backward_parallel(c.x, c.w, c.spec, gy, gx, gw, &gb);
        benchmark::DoNotOptimize(gx);
    }
}

void BM_upsample2_serial(benchmark::State& state) {
    Rng rng(3);
    const Tensor x = random_tensor({1, 32, static_cast<int>(state.range(0)),
                                    static_cast<int>(state.range(0))},
                                   rng);
    for (auto _ : state) benchmark::DoNotOptimize(pdp::kernels::upsample2_forward_serial(x));
}

void BM_upsample2_parallel(benchmark::State& state) {
    Rng rng(3);
    const Tensor x = random_tensor({1, 32, static_cast<int>(state.range(0)),
                                    static_cast<int>(state.range(0))},
                                   rng);
    for (auto _ : state) benchmark::DoNotOptimize(pdp::kernels::upsample2_forward_parallel(x));
}

}  // namespace

BENCHMARK(BM_conv2d_serial)->Args({32, 40})->Args({64, 20})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv2d_parallel)->Args({32, 40})->Args({64, 20})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv2d_grouped_serial)->Arg(40)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv2d_grouped_parallel)->Arg(40)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv2d_backward_serial)->Args({32, 40})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv2d_backward_parallel)->Args({32, 40})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_upsample2_serial)->Arg(160)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_upsample2_parallel)->Arg(160)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
