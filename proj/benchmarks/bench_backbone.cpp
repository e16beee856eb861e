#include <benchmark/benchmark.h>

#include <random>

#include "thumbqc/backbone.hpp"
#include "thumbqc/image.hpp"
#include "thumbqc/synthetic.hpp"

using namespace thumbqc;

static void BM_BackboneForwardTile(benchmark::State& state) {
    BackboneConfig cfg = backbone_preset("desk");
    std::mt19937 rng(1);
    nn::ParamSet params;
    init_backbone(params, cfg, rng);
    const nn::Tensor img =
        normalize(synthetic_thumbnail(5, 1, 224, 224), {0.5, 0.5, 0.5}, {0.5, 0.5, 0.5});
    for (auto _ : state) {
        nn::Tape tape;
        nn::Var f = backbone_forward(tape, params, cfg, img);
        benchmark::DoNotOptimize(tape.val(f).data());
    }
}
BENCHMARK(BM_BackboneForwardTile)->Unit(benchmark::kMillisecond);

static void BM_BackboneForwardUpscaledM(benchmark::State& state) {
    BackboneConfig cfg = backbone_preset("desk");
    std::mt19937 rng(2);
    nn::ParamSet params;
    init_backbone(params, cfg, rng);
    adapt_pos_grid(params, cfg, 28, 56);
    const nn::Tensor img =
        normalize(synthetic_thumbnail(6, 1, 448, 896), {0.5, 0.5, 0.5}, {0.5, 0.5, 0.5});
    for (auto _ : state) {
        nn::Tape tape;
        nn::Var f = backbone_forward(tape, params, cfg, img);
        benchmark::DoNotOptimize(tape.val(f).data());
    }
}
BENCHMARK(BM_BackboneForwardUpscaledM)->Unit(benchmark::kMillisecond);

static void BM_InterpolatePosEmbed(benchmark::State& state) {
    PositionalGrid grid;
    grid.rows = 14;
    grid.cols = 14;
    grid.embeddings = nn::Tensor({196, 64});
    std::mt19937 rng(3);
    init_trunc_normal(grid.embeddings, 0.02, rng);
    grid.extra_tokens = nn::Tensor({1, 64});
    for (auto _ : state) {
        PositionalGrid out = interpolate_pos_embed(grid, 28, 56);
        benchmark::DoNotOptimize(out.embeddings.data());
    }
}
BENCHMARK(BM_InterpolatePosEmbed);
