#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"
#include "thumbqc/errors.hpp"
#include "thumbqc/harness.hpp"
#include "thumbqc/image_io.hpp"
#include "thumbqc/metrics.hpp"
#include "thumbqc/synthetic.hpp"

using namespace thumbqc;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& leaf) {
    const fs::path dir = fs::temp_directory_path() / "thumbqc_harness" / leaf;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

ModelConfig tiny_xs_config() {
    ModelConfig cfg;
    cfg.approach = Approach::xs_slides;
    cfg.scale = "XS";
    cfg.backbone.patch_size = 16;
    cfg.backbone.depth = 1;
    cfg.backbone.heads = 2;
    cfg.backbone.embed_dim = 16;
    cfg.head.layer_sizes = {16, 8, 8};
    cfg.head.input_dim = 16;
    cfg.att.dim = 16;
    cfg.agg.dim = 16;
    return cfg;
}

// Writes thumbnails and returns (slide_id, path) pairs.
std::vector<std::pair<std::string, std::string>> write_inputs(const fs::path& dir, int n,
                                                              uint64_t seed) {
    std::vector<std::pair<std::string, std::string>> out;
    for (int i = 0; i < n; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "in_%02d", i);
        const fs::path p = dir / (std::string(name) + ".ppm");
        save_ppm(synthetic_thumbnail(seed + i, i % 2, 96, 192), p);
        out.emplace_back(name, p.string());
    }
    return out;
}

std::string run_cli(const std::string& args, int* exit_code) {
    const char* bin = std::getenv("THUMBQC_BIN");
    REQUIRE_MESSAGE(bin != nullptr, "THUMBQC_BIN must point at the thumbqc binary");
    const fs::path out = fs::temp_directory_path() / "thumbqc_harness" / "cli_out.txt";
    fs::create_directories(out.parent_path());
    const std::string cmd = std::string(bin) + " " + args + " > " + out.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    *exit_code = WEXITSTATUS(status);
    std::ifstream in(out);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("bundle: save/load round trip preserves inference bit-exactly") {
    const fs::path dir = scratch("bundle");
    SlideModel model = SlideModel::create(tiny_xs_config(), 42);
    const RasterImage thumb = synthetic_thumbnail(7, 1, 100, 200);
    const double before = model.infer_probability(thumb);

    save_bundle(model, dir / "model");
    SlideModel loaded = load_bundle(dir / "model");
    CHECK(loaded.infer_probability(thumb) == before);
    CHECK(loaded.config().scale == "XS");
    CHECK(loaded.config().seed == 42);

    CHECK_THROWS_AS(load_bundle(dir / "missing"), ConfigError);
}

TEST_CASE("bundle: vit_upscaling round trip keeps the adapted grid") {
    const fs::path dir = scratch("bundle_up");
    ModelConfig cfg = tiny_xs_config();
    cfg.approach = Approach::vit_upscaling;
    cfg.scale = "M";
    SlideModel model = SlideModel::create(cfg, 9);
    CHECK(model.config().backbone.pos_rows == 28);
    CHECK(model.config().backbone.pos_cols == 56);

    const RasterImage thumb = synthetic_thumbnail(8, 0, 120, 260);
    const double before = model.infer_probability(thumb);
    save_bundle(model, dir / "model");
    SlideModel loaded = load_bundle(dir / "model");
    CHECK(loaded.config().backbone.pos_rows == 28);
    CHECK(loaded.infer_probability(thumb) == before);
}

TEST_CASE("infer_batch: cardinality, error records, order stability, determinism") {
    const fs::path dir = scratch("infer");
    auto inputs = write_inputs(dir, 3, 50);
    // Inject a corrupt file in the middle.
    {
        std::ofstream bad(dir / "in_corrupt.ppm", std::ios::binary);
        bad << "P6\n10 10\n255\nshort";
    }
    inputs.insert(inputs.begin() + 1, {"in_corrupt", (dir / "in_corrupt.ppm").string()});

    SlideModel model = SlideModel::create(tiny_xs_config(), 3);
    InferOptions opts;
    opts.threads = 2;
    auto verdicts = infer_batch(model, inputs, opts);
    REQUIRE(verdicts.size() == 4);
    CHECK(verdicts[0].ok);
    CHECK_FALSE(verdicts[1].ok);
    CHECK(verdicts[2].ok);
    CHECK(verdicts[3].ok);
    CHECK(verdicts[1].slide_id == "in_corrupt");
    CHECK_FALSE(verdicts[1].error.empty());

    // Same inputs with one thread: identical order and identical probabilities.
    opts.threads = 1;
    auto again = infer_batch(model, inputs, opts);
    for (size_t i = 0; i < verdicts.size(); ++i) {
        CHECK(again[i].slide_id == verdicts[i].slide_id);
        if (verdicts[i].ok) {
            CHECK(again[i].probability_ffpe == verdicts[i].probability_ffpe);
            CHECK(verdict_to_json(again[i]).find("probability_ffpe") != std::string::npos);
        }
    }

    for (const auto& v : verdicts) {
        if (v.ok) {
            CHECK(v.probability_ffpe > 0.0);
            CHECK(v.probability_ffpe < 1.0);
            CHECK(v.ms > 0.0);
        }
    }
}

TEST_CASE("evaluate_manifest: grouping, perfect groups and cross-checks") {
    const fs::path dir = scratch("eval");
    auto inputs = write_inputs(dir, 6, 60);

    Manifest manifest;
    for (size_t i = 0; i < inputs.size(); ++i) {
        ManifestRecord r;
        r.slide_id = inputs[i].first;
        r.path = inputs[i].second;
        r.label = static_cast<int>(i % 2);
        r.dataset = i < 4 ? "site_a" : "site_b";
        r.split = "test";
        manifest.records.push_back(std::move(r));
    }

    SlideModel model = SlideModel::create(tiny_xs_config(), 4);
    auto reports = evaluate_manifest(model, manifest, {});
    REQUIRE(reports.size() == 2);
    CHECK(reports[0].dataset == "site_a");
    CHECK(reports[1].dataset == "site_b");
    CHECK(reports[0].metrics.n == 4);
    CHECK(reports[1].metrics.n == 2);

    // Cross-check one group against direct metrics-module calls.
    std::vector<ScoredSample> scored;
    for (size_t i = 0; i < 4; ++i) {
        scored.push_back({inputs[i].first, model.infer_probability(load_image(inputs[i].second)),
                          static_cast<int>(i % 2)});
    }
    MetricsReport direct = compute_metrics(scored);
    CHECK(reports[0].metrics.accuracy == direct.accuracy);
    CHECK(reports[0].metrics.f1 == direct.f1);
    CHECK(reports[0].metrics.auroc == doctest::Approx(direct.auroc).epsilon(1e-15));

    // Single-class group: AUROC undefined, NA in the CSV.
    Manifest single;
    for (size_t i = 0; i < 2; ++i) {
        single.records.push_back({inputs[i].first, inputs[i].second, 1, "only_ffpe", "test"});
    }
    auto reports2 = evaluate_manifest(model, single, {});
    REQUIRE(reports2.size() == 1);
    CHECK_FALSE(reports2[0].metrics.auroc_defined);
    const fs::path csv = dir / "eval.csv";
    write_eval_csv(reports2, csv);
    std::ifstream in(csv);
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(header == "dataset,acc,f1,auroc");
    CHECK(row.find("NA") != std::string::npos);
}

TEST_CASE("bench: iterations=1 collapses median and p95; report shape") {
    BackboneConfig desk = backbone_preset("desk");
    desk.depth = 1;
    desk.embed_dim = 16;
    desk.heads = 2;
    BenchReport report =
        run_bench(desk, "desk", {{Approach::xs_slides, "XS"}}, 1, 0, 5);
    REQUIRE(report.rows.size() == 1);
    CHECK(report.single_threaded);
    CHECK(report.threads == 1);
    CHECK(report.iterations == 1);
    CHECK(report.rows[0].total.median_ms == report.rows[0].total.p95_ms);
    CHECK(report.rows[0].total.median_ms > 0.0);
    CHECK(report.rows[0].preprocess.median_ms <= report.rows[0].preprocess.p95_ms);
    CHECK(report.to_json().find("\"single_threaded\": true") != std::string::npos);
}

TEST_CASE("median and p95 helpers") {
    CHECK(median_of({3.0}) == 3.0);
    CHECK(p95_of({3.0}) == 3.0);
    CHECK(median_of({1.0, 2.0}) == 1.5);
    CHECK(p95_of({1.0, 2.0}) == 2.0);
    CHECK(median_of({5.0, 1.0, 3.0}) == 3.0);
    std::vector<double> xs;
    for (int i = 1; i <= 100; ++i) xs.push_back(static_cast<double>(i));
    CHECK(median_of(xs) == 50.5);
    CHECK(p95_of(xs) == 95.0);
}

TEST_CASE("cli: exit codes for missing model, empty input and config errors") {
    const fs::path dir = scratch("cli_codes");
    fs::create_directories(dir / "empty");
    int code = 0;

    run_cli("infer " + (dir / "empty").string() + " --model " + (dir / "nope").string(), &code);
    CHECK(code == kExitConfig);

    // Valid model, empty input set.
    SlideModel model = SlideModel::create(tiny_xs_config(), 6);
    save_bundle(model, dir / "model");
    run_cli("infer " + (dir / "empty").string() + " --model " + (dir / "model").string(), &code);
    CHECK(code == kExitEmptyInput);

    // Malformed train config: exit 2 with a field-level message.
    const fs::path bad_cfg = dir / "bad.json";
    {
        std::ofstream out(bad_cfg);
        out << "{\"manifest\": \"x.csv\"}";  // missing 'out'
    }
    std::string msg = run_cli("train --config " + bad_cfg.string(), &code);
    CHECK(code == kExitConfig);
    CHECK(msg.find("out") != std::string::npos);
}

TEST_CASE("cli: infer tolerates corrupt inputs and is byte-deterministic") {
    const fs::path dir = scratch("cli_infer");
    write_inputs(dir, 3, 70);
    {
        std::ofstream bad(dir / "zz_corrupt.ppm", std::ios::binary);
        bad << "P6\n64 64\n255\nnope";
    }
    SlideModel model = SlideModel::create(tiny_xs_config(), 7);
    save_bundle(model, dir / "model");

    int code = 0;
    const std::string base = "infer " + dir.string() + " --model " + (dir / "model").string() +
                             " --out " + (dir / "v1.jsonl").string();
    run_cli(base, &code);
    CHECK(code == kExitOk);
    run_cli("infer " + dir.string() + " --model " + (dir / "model").string() + " --out " +
                (dir / "v2.jsonl").string(),
            &code);
    CHECK(code == kExitOk);

    auto read_lines = [](const fs::path& p) {
        std::ifstream in(p);
        std::vector<std::string> lines;
        std::string line;
        while (std::getline(in, line)) lines.push_back(line);
        return lines;
    };
    auto v1 = read_lines(dir / "v1.jsonl");
    auto v2 = read_lines(dir / "v2.jsonl");
    REQUIRE(v1.size() == 4);
    int errors = 0;
    for (const auto& line : v1) {
        if (line.find("\"error\"") != std::string::npos) ++errors;
    }
    CHECK(errors == 1);
    // Probability fields are byte-identical across invocations. The ms field
    // varies, so compare everything up to it.
    REQUIRE(v1.size() == v2.size());
    for (size_t i = 0; i < v1.size(); ++i) {
        const auto cut = [](const std::string& s) {
            const auto pos = s.find("\"ms\"");
            return pos == std::string::npos ? s : s.substr(0, pos);
        };
        CHECK(cut(v1[i]) == cut(v2[i]));
    }
}

TEST_CASE("cli: train writes a bundle that reloads to identical val accuracy") {
    const fs::path dir = scratch("cli_train");
    SyntheticSpec spec;
    spec.n_train = 6;
    spec.n_val = 4;
    spec.n_test = 0;
    spec.seed = 11;
    Manifest m = write_synthetic_dataset(spec, dir / "data");

    const fs::path cfg = dir / "train.json";
    {
        std::ofstream out(cfg);
        out << R"({
  "manifest": ")" << (dir / "data" / "manifest.csv").string() << R"(",
  "out": ")" << (dir / "model").string() << R"(",
  "approach": "xs_slides",
  "scale": "XS",
  "backbone": {"name": "custom", "patch_size": 16, "depth": 1, "heads": 2, "embed_dim": 16},
  "head_layers": [16, 8, 8],
  "epochs": 2, "batch_size": 4, "lr": 0.001, "seed": 13
})";
    }
    int code = 0;
    std::string out_text = run_cli("train --config " + cfg.string(), &code);
    REQUIRE(code == kExitOk);
    CHECK(fs::exists(dir / "model" / "config.json"));
    CHECK(fs::exists(dir / "model" / "weights.tqw"));
    CHECK(fs::exists(dir / "model" / "epochs.jsonl"));

    // Recompute val accuracy from the reloaded bundle; it must match the
    // best_val_acc the training loop reported.
    const auto pos = out_text.rfind("{");
    REQUIRE(pos != std::string::npos);
    const double reported = std::stod(
        out_text.substr(out_text.find("\"best_val_acc\":") + 15));
    SlideModel loaded = load_bundle(dir / "model");
    long correct = 0;
    long total = 0;
    for (const auto& r : m.records) {
        if (r.split != "val") continue;
        const double p = loaded.infer_probability(load_image(r.path));
        if ((p >= 0.5 ? 1 : 0) == r.label) ++correct;
        ++total;
    }
    CHECK(static_cast<double>(correct) / total == doctest::Approx(reported).epsilon(1e-12));
}

TEST_CASE("cli: THUMBQC_SEED env overrides the config seed, --seed beats both") {
    const fs::path dir = scratch("cli_seed");
    const fs::path cfg = dir / "hpo.json";
    auto write_cfg = [&](const fs::path& log) {
        std::ofstream out(cfg);
        out << R"({"out_log": ")" << log.string() << R"(",
                  "objective": "quadratic",
                  "space": [{"name": "x", "low": 0, "high": 448, "step": 64}],
                  "R": 1, "max_trials": 3, "seed": 1})";
    };
    const char* bin = std::getenv("THUMBQC_BIN");
    REQUIRE(bin != nullptr);
    int code = 0;

    write_cfg(dir / "env.jsonl");
    const fs::path out = dir / "out.txt";
    std::string cmd = std::string("THUMBQC_SEED=99 ") + bin + " hpo --config " + cfg.string() +
                      " > " + out.string() + " 2>&1";
    code = WEXITSTATUS(std::system(cmd.c_str()));
    REQUIRE(code == kExitOk);
    std::ifstream in(out);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(text.find("\"seed\": 99") != std::string::npos);

    write_cfg(dir / "flag.jsonl");
    cmd = std::string("THUMBQC_SEED=99 ") + bin + " hpo --config " + cfg.string() +
          " --seed 123 > " + out.string() + " 2>&1";
    code = WEXITSTATUS(std::system(cmd.c_str()));
    REQUIRE(code == kExitOk);
    std::ifstream in2(out);
    std::string text2((std::istreambuf_iterator<char>(in2)), std::istreambuf_iterator<char>());
    CHECK(text2.find("\"seed\": 123") != std::string::npos);
}

TEST_CASE("cli: hpo writes one sampled record per trial and resumes") {
    const fs::path dir = scratch("cli_hpo");
    const fs::path cfg = dir / "hpo.json";
    const fs::path log = dir / "study.jsonl";
    {
        std::ofstream out(cfg);
        out << R"({
  "out_log": ")" << log.string() << R"(",
  "objective": "quadratic",
  "space": [{"name": "x", "low": 0, "high": 448, "step": 64}],
  "quadratic_target": [192],
  "R": 1, "max_trials": 8, "seed": 21
})";
    }
    int code = 0;
    run_cli("hpo --config " + cfg.string(), &code);
    REQUIRE(code == kExitOk);
    std::ifstream in(log);
    std::string line;
    int sampled = 0;
    while (std::getline(in, line)) {
        if (line.find("\"sampled\"") != std::string::npos) ++sampled;
    }
    CHECK(sampled == 8);

    // Re-running with the same config replays the log: still 8 trials.
    std::string text = run_cli("hpo --config " + cfg.string(), &code);
    REQUIRE(code == kExitOk);
    CHECK(text.find("\"trials\": 8") != std::string::npos);
}
