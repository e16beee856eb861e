#include <benchmark/benchmark.h>

#include <random>

#include "thumbqc/metrics.hpp"

using namespace thumbqc;

namespace {

std::vector<ScoredSample> make_samples(size_t n) {
    std::vector<ScoredSample> s(n);
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (size_t i = 0; i < n; ++i) {
        s[i] = {"s" + std::to_string(i), u(rng), static_cast<int>(rng() % 2)};
    }
    s[0].label = 1;
    s[n - 1].label = 0;
    return s;
}

}  // namespace

static void BM_AurocMidrank(benchmark::State& state) {
    auto samples = make_samples(static_cast<size_t>(state.range(0)));
    for (auto _ : state) {
        benchmark::DoNotOptimize(auroc(samples));
    }
}
BENCHMARK(BM_AurocMidrank)->Arg(100)->Arg(1000)->Arg(10000);

// The O(n^2) pairwise form kept as the test oracle, for scale contrast.
static void BM_AurocPairwise(benchmark::State& state) {
    auto samples = make_samples(static_cast<size_t>(state.range(0)));
    for (auto _ : state) {
        double credit = 0.0;
        long pairs = 0;
        for (const auto& p : samples) {
            if (p.label != 1) continue;
            for (const auto& n : samples) {
                if (n.label != 0) continue;
                ++pairs;
                if (p.score > n.score) credit += 1.0;
                else if (p.score == n.score) credit += 0.5;
            }
        }
        benchmark::DoNotOptimize(credit / static_cast<double>(pairs));
    }
}
BENCHMARK(BM_AurocPairwise)->Arg(100)->Arg(1000);

static void BM_ComputeMetrics(benchmark::State& state) {
    auto samples = make_samples(5000);
    for (auto _ : state) {
        MetricsReport r = compute_metrics(samples);
        benchmark::DoNotOptimize(r.auroc);
    }
}
BENCHMARK(BM_ComputeMetrics);
