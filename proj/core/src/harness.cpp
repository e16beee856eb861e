#include "thumbqc/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "thumbqc/errors.hpp"
#include "thumbqc/image_io.hpp"
#include "thumbqc/nn/tape.hpp"
#include "thumbqc/synthetic.hpp"
#include "thumbqc/weights.hpp"

namespace thumbqc {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double ms_between(Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
}

int resolve_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Index-stealing parallel for: results land at their input index, so output
// order never depends on the thread count.
void parallel_for(size_t n, int threads, const std::function<void(size_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    const int count = std::min<size_t>(threads, n);
    pool.reserve(count);
    for (int t = 0; t < count; ++t) {
        pool.emplace_back([&] {
            for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace

void save_bundle(const SlideModel& model, const fs::path& dir) {
    fs::create_directories(dir);
    std::ofstream cfg(dir / "config.json");
    if (!cfg) throw IoError("cannot write bundle config: " + (dir / "config.json").string());
    cfg << model_config_to_json(model.config()) << '\n';
    cfg.close();
    save_weights(model.params(), dir / "weights.tqw", WeightDtype::f64,
                 {{"seed", std::to_string(model.config().seed)},
                  {"approach", approach_name(model.config().approach)}});
}

SlideModel load_bundle(const fs::path& dir) {
    const fs::path cfg_path = dir / "config.json";
    const fs::path weights_path = dir / "weights.tqw";
    if (!fs::exists(cfg_path) || !fs::exists(weights_path)) {
        throw ConfigError("model bundle missing config.json or weights.tqw in " + dir.string());
    }
    std::ifstream in(cfg_path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ModelConfig cfg = model_config_from_json(text);
    SlideModel model = SlideModel::from_config(cfg);
    apply_weights(model.params(), load_weights(weights_path));
    return model;
}

std::string verdict_to_json(const SlideVerdict& v) {
    json j;
    j["slide_id"] = v.slide_id;
    if (v.ok) {
        j["probability_ffpe"] = v.probability_ffpe;
        j["label"] = label_to_string(v.predicted);
        j["approach"] = v.approach;
        j["scale"] = v.scale;
        j["ms"] = v.ms;
    } else {
        j["error"] = v.error;
    }
    return j.dump();
}

std::vector<std::pair<std::string, std::string>> list_input_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const auto ext = e.path().extension();
        if (ext == ".png" || ext == ".ppm") {
            out.emplace_back(e.path().stem().string(), e.path().string());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<SlideVerdict> infer_batch(const SlideModel& model,
                                      const std::vector<std::pair<std::string, std::string>>& inputs,
                                      const InferOptions& opts) {
    std::vector<SlideVerdict> verdicts(inputs.size());
    parallel_for(inputs.size(), resolve_threads(opts.threads), [&](size_t i) {
        SlideVerdict& v = verdicts[i];
        v.slide_id = inputs[i].first;
        v.approach = approach_name(model.config().approach);
        v.scale = model.config().scale;
        try {
            const RasterImage thumb = load_image(inputs[i].second);
            const auto t0 = Clock::now();
            v.probability_ffpe = model.infer_probability(thumb);
            v.ms = ms_between(t0, Clock::now());
            v.predicted = v.probability_ffpe >= opts.threshold ? 1 : 0;
            v.ok = true;
        } catch (const std::exception& e) {
            v.ok = false;
            v.error = e.what();
        }
    });
    return verdicts;
}

void write_verdicts_jsonl(const std::vector<SlideVerdict>& verdicts, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write verdicts: " + path.string());
    for (const auto& v : verdicts) out << verdict_to_json(v) << '\n';
}

std::vector<DatasetReport> evaluate_manifest(const SlideModel& model, const Manifest& manifest,
                                             const InferOptions& opts) {
    std::vector<const ManifestRecord*> rows;
    for (const auto& r : manifest.records) {
        if (r.label == 0 || r.label == 1) rows.push_back(&r);
    }
    if (rows.empty()) throw InvalidInput("evaluate_manifest: no labeled rows");

    std::vector<ScoredSample> scored(rows.size());
    parallel_for(rows.size(), resolve_threads(opts.threads), [&](size_t i) {
        const RasterImage thumb = load_image(rows[i]->path);
        scored[i] = {rows[i]->slide_id, model.infer_probability(thumb), rows[i]->label};
    });

    // Group by dataset, keeping first-appearance order.
    std::vector<DatasetReport> reports;
    std::vector<std::string> names;
    for (size_t i = 0; i < rows.size(); ++i) {
        if (std::find(names.begin(), names.end(), rows[i]->dataset) == names.end()) {
            names.push_back(rows[i]->dataset);
        }
    }
    for (const auto& name : names) {
        std::vector<ScoredSample> group;
        for (size_t i = 0; i < rows.size(); ++i) {
            if (rows[i]->dataset == name) group.push_back(scored[i]);
        }
        reports.push_back({name, compute_metrics(group, opts.threshold)});
    }
    return reports;
}

void write_eval_csv(const std::vector<DatasetReport>& reports, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write eval csv: " + path.string());
    out << "dataset,acc,f1,auroc\n";
    for (const auto& r : reports) out << r.metrics.to_csv_row(r.dataset) << '\n';
}

std::string eval_reports_to_json(const std::vector<DatasetReport>& reports) {
    json arr = json::array();
    for (const auto& r : reports) {
        json j = json::parse(r.metrics.to_json());
        j["dataset"] = r.dataset;
        arr.push_back(std::move(j));
    }
    return arr.dump(2);
}

double median_of(std::vector<double> xs) {
    if (xs.empty()) throw InvalidInput("median of empty set");
    std::sort(xs.begin(), xs.end());
    const size_t n = xs.size();
    return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

double p95_of(std::vector<double> xs) {
    if (xs.empty()) throw InvalidInput("p95 of empty set");
    std::sort(xs.begin(), xs.end());
    const size_t rank = static_cast<size_t>(std::ceil(0.95 * static_cast<double>(xs.size())));
    return xs[std::max<size_t>(rank, 1) - 1];
}

std::string canonical_scale_for(Approach a) {
    switch (a) {
        case Approach::xs_slides: return "XS";
        case Approach::vit_upscaling: return "M";
        default: return "L";
    }
}

std::vector<BenchTask> default_bench_tasks() {
    return {{Approach::xs_slides, "XS"},
            {Approach::vit_upscaling, "M"},
            {Approach::tiled_soft_vote, "L"},
            {Approach::tiled_attention, "L"},
            {Approach::tiled_transformer, "L"}};
}

std::string BenchReport::to_json() const {
    json j;
    j["warmup"] = warmup;
    j["iterations"] = iterations;
    j["single_threaded"] = single_threaded;
    j["threads"] = threads;
    json rows_json = json::array();
    for (const auto& r : rows) {
        rows_json.push_back({{"approach", r.approach},
                             {"scale", r.scale},
                             {"backbone", r.backbone},
                             {"tile_count", r.tile_count},
                             {"preprocess_ms", {{"median", r.preprocess.median_ms},
                                                {"p95", r.preprocess.p95_ms}}},
                             {"forward_ms", {{"median", r.forward.median_ms},
                                             {"p95", r.forward.p95_ms}}},
                             {"total_ms", {{"median", r.total.median_ms},
                                           {"p95", r.total.p95_ms}}}});
    }
    j["results"] = std::move(rows_json);
    return j.dump(2);
}

BenchReport run_bench(const BackboneConfig& backbone, const std::string& backbone_name,
                      const std::vector<BenchTask>& tasks, int iterations, int warmup,
                      uint64_t seed) {
    if (iterations < 1) throw InvalidInput("run_bench: iterations must be >= 1");
    if (warmup < 0) throw InvalidInput("run_bench: negative warmup");

    // One fixed seeded thumbnail for every task.
    const RasterImage thumb = synthetic_thumbnail(seed, 1);

    BenchReport report;
    report.warmup = warmup;
    report.iterations = iterations;
    report.single_threaded = true;
    report.threads = 1;

    for (const BenchTask& task : tasks) {
        ModelConfig cfg;
        cfg.approach = task.approach;
        cfg.scale = task.scale.empty() ? canonical_scale_for(task.approach) : task.scale;
        cfg.backbone_name = backbone_name;
        cfg.backbone = backbone;
        cfg.backbone.pos_rows = 224 / backbone.patch_size;
        cfg.backbone.pos_cols = 224 / backbone.patch_size;
        cfg.head.input_dim = cfg.backbone.feature_dim();
        cfg.att.dim = cfg.backbone.feature_dim();
        cfg.agg.dim = cfg.backbone.feature_dim();
        cfg.agg.slots = std::max(32, scale_by_name(cfg.scale).tile_count());
        SlideModel model = SlideModel::create(cfg, seed);

        std::vector<double> pre_ms, fwd_ms, tot_ms;
        for (int it = 0; it < warmup + iterations; ++it) {
            const auto t0 = Clock::now();
            const RasterImage scaled = model.preprocess(thumb);
            const auto t1 = Clock::now();
            nn::Tape tape;
            tape.set_inference(true);
            nn::Var p = model.batch_probabilities(tape, {&scaled}, RunMode{});
            (void)tape.val(p);
            const auto t2 = Clock::now();
            if (it >= warmup) {
                pre_ms.push_back(ms_between(t0, t1));
                fwd_ms.push_back(ms_between(t1, t2));
                tot_ms.push_back(ms_between(t0, t2));
            }
        }

        BenchRow row;
        row.approach = approach_name(task.approach);
        row.scale = cfg.scale;
        row.backbone = backbone_name;
        row.tile_count = approach_is_tiled(task.approach) ? scale_by_name(cfg.scale).tile_count() : 1;
        row.preprocess = {median_of(pre_ms), p95_of(pre_ms)};
        row.forward = {median_of(fwd_ms), p95_of(fwd_ms)};
        row.total = {median_of(tot_ms), p95_of(tot_ms)};
        report.rows.push_back(std::move(row));
    }
    return report;
}

}  // namespace thumbqc
