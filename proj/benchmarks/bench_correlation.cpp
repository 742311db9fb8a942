#include <benchmark/benchmark.h>

#include <random>

#include "stereocorr/inference.hpp"

using namespace stereocorr;

namespace {

FeatureMap random_features(int rows, int cols, int ch, std::uint64_t seed) {
    FeatureMap fm(rows, cols, ch);
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> dist(0.f, 1.f);
    for (auto& v : fm.v) v = dist(rng);
    return fm;
}

void inner_product_scores(benchmark::State& state) {
    const int dmax = int(state.range(0));
    const auto fl = random_features(64, 96, 64, 1);
    const auto fr = random_features(64, 96, 64, 2);
    for (auto _ : state) {
        const auto vol = inner_product_volume(fl, fr, dmax);
        benchmark::DoNotOptimize(vol.v.data());
    }
    state.SetItemsProcessed(state.iterations() * std::int64_t(64) * 96 * (dmax + 1) * 64);
}
BENCHMARK(inner_product_scores)->Arg(16)->Arg(64);

void psi_aggregation(benchmark::State& state) {
    const int dmax = int(state.range(0));
    const auto fl = random_features(64, 96, 64, 1);
    const auto fr = random_features(64, 96, 64, 2);
    for (auto _ : state) {
        const auto psi = build_psi(fl, fr, dmax);
        benchmark::DoNotOptimize(psi.v.data());
    }
    state.SetItemsProcessed(state.iterations() * std::int64_t(64) * 96 * (dmax + 1) * 128);
}
BENCHMARK(psi_aggregation)->Arg(16)->Arg(64);

void learned_scoring_banded(benchmark::State& state) {
    const int band = int(state.range(0));
    const auto fl = random_features(64, 96, 64, 1);
    const auto fr = random_features(64, 96, 64, 2);
    StereoModel model = StereoModel::build(ArchSpec::s7(), CorrMode::Learned, 7);
    InferOptions opt;
    opt.band_rows = band;
    for (auto _ : state) {
        const auto res = infer_features(model, fl, fr, 16, opt);
        benchmark::DoNotOptimize(res.disp.d.data());
    }
    // hidden layer dominates: 2*theta channels, 3 taps, per pixel per disparity
    state.SetItemsProcessed(state.iterations() * std::int64_t(64) * 96 * 17 * 128 * 128 * 3);
}
BENCHMARK(learned_scoring_banded)->Arg(1)->Arg(8)->Arg(64);

} // namespace
