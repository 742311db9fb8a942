#include <benchmark/benchmark.h>

#include <random>

#include "stereocorr/graph.hpp"

using namespace stereocorr;

namespace {

Tensor4 randn(Shape4 s, std::uint64_t seed) {
    Tensor4 t(s);
    std::mt19937_64 rng(seed);
    t.fill_randn(rng, 1.f);
    return t;
}

void conv3x3_forward(benchmark::State& state) {
    const int c = int(state.range(0)), hw = int(state.range(1));
    const auto in = randn({4, c, hw, hw}, 1);
    const auto w = randn({c, c, 3, 3}, 2);
    const std::vector<float> bias(size_t(c), 0.1f);
    Tensor4 out(4, c, hw, hw);
    for (auto _ : state) {
        kern::conv2d_forward(in, w, bias, 1, 1, 1, out);
        benchmark::DoNotOptimize(out.values.data());
    }
    state.SetItemsProcessed(state.iterations() * std::int64_t(4) * c * c * 9 * hw * hw);
}
BENCHMARK(conv3x3_forward)->Args({32, 28})->Args({64, 28})->Args({64, 96});

void conv3x3_backward_weights(benchmark::State& state) {
    const int c = int(state.range(0)), hw = int(state.range(1));
    const auto in = randn({4, c, hw, hw}, 1);
    const auto dout = randn({4, c, hw, hw}, 3);
    Tensor4 w(c, c, 3, 3);
    w.ensure_grad();
    std::vector<float> db(size_t(c), 0.f);
    Tensor4 holder(4, c, hw, hw);
    for (auto _ : state) {
        kern::conv2d_backward_weights(in, holder, dout.data(), 1, 1, 1, w.shape, w.grad_data(),
                                      db.data());
        benchmark::DoNotOptimize(w.grad.data());
    }
    state.SetItemsProcessed(state.iterations() * std::int64_t(4) * c * c * 9 * hw * hw);
}
BENCHMARK(conv3x3_backward_weights)->Args({32, 28})->Args({64, 28});

void deconv_forward(benchmark::State& state) {
    const int c = int(state.range(0)), hw = int(state.range(1));
    const auto in = randn({4, c, hw, hw}, 1);
    const auto w = randn({c, c, 3, 3}, 2);
    const std::vector<float> bias(size_t(c), 0.1f);
    Tensor4 out(4, c, 2 * hw, 2 * hw);
    for (auto _ : state) {
        kern::deconv2_forward(in, w, bias, out);
        benchmark::DoNotOptimize(out.values.data());
    }
    state.SetItemsProcessed(state.iterations() * std::int64_t(4) * c * c * 9 * hw * hw);
}
BENCHMARK(deconv_forward)->Args({32, 14})->Args({64, 48});

void maxpool_forward(benchmark::State& state) {
    const auto in = randn({4, 64, 96, 96}, 1);
    Tensor4 out(4, 64, 48, 48);
    std::vector<std::uint8_t> argmax;
    for (auto _ : state) {
        kern::maxpool2_forward(in, out, argmax);
        benchmark::DoNotOptimize(out.values.data());
    }
    state.SetItemsProcessed(state.iterations() * in.numel());
}
BENCHMARK(maxpool_forward);

} // namespace

BENCHMARK_MAIN();
