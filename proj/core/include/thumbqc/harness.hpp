#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "thumbqc/manifest.hpp"
#include "thumbqc/metrics.hpp"
#include "thumbqc/model.hpp"

namespace thumbqc {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitEmptyInput = 3;

/// Model bundle on disk: one directory holding config.json plus the weight
/// container weights.tqw (f64 payloads, bit-exact round trip).
void save_bundle(const SlideModel& model, const std::filesystem::path& dir);
SlideModel load_bundle(const std::filesystem::path& dir);

struct SlideVerdict {
    std::string slide_id;
    double probability_ffpe = 0.0;
    int predicted = 0;  // 1 = FFPE, 0 = FS
    std::string approach;
    std::string scale;
    double ms = 0.0;  // preprocess + forward wall clock, file decode excluded
    bool ok = true;
    std::string error;
};

std::string verdict_to_json(const SlideVerdict& v);

struct InferOptions {
    int threads = 0;  // 0 = hardware concurrency
    double threshold = 0.5;
};

/// (slide_id, path) pairs for an input directory, lexicographic by filename.
std::vector<std::pair<std::string, std::string>> list_input_dir(
    const std::filesystem::path& dir);

/// Scores every input; unreadable files become error verdicts, never
/// aborts. Output order equals input order regardless of thread count.
std::vector<SlideVerdict> infer_batch(const SlideModel& model,
                                      const std::vector<std::pair<std::string, std::string>>& inputs,
                                      const InferOptions& opts);

void write_verdicts_jsonl(const std::vector<SlideVerdict>& verdicts,
                          const std::filesystem::path& path);

struct DatasetReport {
    std::string dataset;
    MetricsReport metrics;
};

/// Scores all labeled rows and reports metrics per dataset name.
std::vector<DatasetReport> evaluate_manifest(const SlideModel& model, const Manifest& manifest,
                                             const InferOptions& opts);

/// Results CSV: header "dataset,acc,f1,auroc", one row per dataset.
void write_eval_csv(const std::vector<DatasetReport>& reports, const std::filesystem::path& path);
std::string eval_reports_to_json(const std::vector<DatasetReport>& reports);

/// Latency benchmark. Always single-threaded; warmup passes are excluded
/// from the stats; preprocessing (orientation/stretch/resize) and the
/// forward pass (tiling, normalization, network) are timed separately and
/// together on one fixed seeded synthetic thumbnail.
struct BenchTask {
    Approach approach;
    std::string scale;  // canonical scale of the approach unless overridden
};

struct BenchStats {
    double median_ms = 0.0;
    double p95_ms = 0.0;
};

struct BenchRow {
    std::string approach;
    std::string scale;
    std::string backbone;
    int tile_count = 0;
    BenchStats preprocess;
    BenchStats forward;
    BenchStats total;
};

struct BenchReport {
    int warmup = 0;
    int iterations = 0;
    bool single_threaded = true;
    int threads = 1;
    std::vector<BenchRow> rows;
    std::string to_json() const;
};

std::vector<BenchTask> default_bench_tasks();
std::string canonical_scale_for(Approach a);

BenchReport run_bench(const BackboneConfig& backbone, const std::string& backbone_name,
                      const std::vector<BenchTask>& tasks, int iterations, int warmup,
                      uint64_t seed);

double median_of(std::vector<double> xs);
double p95_of(std::vector<double> xs);

}  // namespace thumbqc
