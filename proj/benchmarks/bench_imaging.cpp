#include <benchmark/benchmark.h>

#include "thumbqc/image.hpp"
#include "thumbqc/synthetic.hpp"

using namespace thumbqc;

static void BM_StretchToCanonical(benchmark::State& state) {
    const RasterImage thumb = synthetic_thumbnail(1, 1, 480, 960);
    const RasterImage oriented = orient_landscape(thumb);
    for (auto _ : state) {
        RasterImage out = stretch_to_canonical(oriented);
        benchmark::DoNotOptimize(out.data.data());
    }
}
BENCHMARK(BM_StretchToCanonical)->Unit(benchmark::kMillisecond);

static void BM_ResizeToScale(benchmark::State& state) {
    const RasterImage canonical =
        stretch_to_canonical(orient_landscape(synthetic_thumbnail(2, 0, 480, 960)));
    const ScaleConfig& scale = all_scales()[static_cast<size_t>(state.range(0))];
    for (auto _ : state) {
        RasterImage out = resize_to_scale(canonical, scale);
        benchmark::DoNotOptimize(out.data.data());
    }
    state.SetLabel(scale.name);
}
BENCHMARK(BM_ResizeToScale)->Arg(0)->Arg(1)->Arg(2)->Arg(3)->Unit(benchmark::kMillisecond);

static void BM_TileL(benchmark::State& state) {
    const RasterImage canonical =
        stretch_to_canonical(orient_landscape(synthetic_thumbnail(3, 0, 480, 960)));
    const ScaleConfig& scale = scale_by_name("L");
    for (auto _ : state) {
        TileBatch batch = tile(canonical, scale);
        benchmark::DoNotOptimize(batch.tiles.data());
    }
}
BENCHMARK(BM_TileL)->Unit(benchmark::kMillisecond);

static void BM_Normalize(benchmark::State& state) {
    const RasterImage img = synthetic_thumbnail(4, 1, 224, 224);
    for (auto _ : state) {
        nn::Tensor t = normalize(img, {0.5, 0.5, 0.5}, {0.5, 0.5, 0.5});
        benchmark::DoNotOptimize(t.data());
    }
}
BENCHMARK(BM_Normalize);
