// thumbqc: fixation-type QC on slide thumbnails.
// Subcommands: infer, train, eval, bench, hpo, preprocess.
#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include <nlohmann/json.hpp>

#include "thumbqc/errors.hpp"
#include "thumbqc/harness.hpp"
#include "thumbqc/hpo.hpp"
#include "thumbqc/image_io.hpp"
#include "thumbqc/synthetic.hpp"
#include "thumbqc/training.hpp"

using namespace thumbqc;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Precedence: --seed flag, then THUMBQC_SEED, then the config value.
uint64_t resolve_seed(const std::optional<uint64_t>& flag_seed, uint64_t config_seed) {
    if (flag_seed) return *flag_seed;
    if (const char* env = std::getenv("THUMBQC_SEED")) {
        return std::stoull(env);
    }
    return config_seed;
}

json load_json_file(const fs::path& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw ConfigError(std::string(what) + ": cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(std::string(what) + ": " + path.string() + ": " + e.what());
    }
}

std::vector<std::pair<std::string, std::string>> gather_inputs(const std::string& manifest_path,
                                                               const std::string& input_dir) {
    std::vector<std::pair<std::string, std::string>> inputs;
    if (!manifest_path.empty()) {
        Manifest m = load_manifest(manifest_path);
        for (const auto& r : m.records) inputs.emplace_back(r.slide_id, r.path);
    } else if (!input_dir.empty()) {
        inputs = list_input_dir(input_dir);
    }
    return inputs;
}

ModelConfig model_config_from_cli_json(const json& j) {
    ModelConfig cfg;
    try {
        cfg.approach = approach_from_name(j.at("approach").get<std::string>());
        cfg.scale = j.at("scale").get<std::string>();
        if (j.contains("backbone") && j["backbone"].is_object()) {
            const json& b = j["backbone"];
            cfg.backbone_name = b.value("name", std::string("custom"));
            cfg.backbone.patch_size = b.value("patch_size", 16);
            cfg.backbone.depth = b.value("depth", 2);
            cfg.backbone.heads = b.value("heads", 4);
            cfg.backbone.embed_dim = b.value("embed_dim", 64);
            cfg.backbone.mlp_ratio = b.value("mlp_ratio", 4.0);
            cfg.backbone.n_register_tokens = b.value("n_register_tokens", 0);
            cfg.backbone.output_mode =
                output_mode_from_name(b.value("output_mode", std::string("class_token")));
            cfg.backbone.pos_rows = 224 / cfg.backbone.patch_size;
            cfg.backbone.pos_cols = 224 / cfg.backbone.patch_size;
        } else {
            cfg.backbone_name = j.value("backbone", std::string("desk"));
            cfg.backbone = backbone_preset(cfg.backbone_name);
        }
        if (j.contains("head_layers")) {
            auto layers = j["head_layers"].get<std::vector<int>>();
            if (layers.size() != 3) throw ConfigError("config field 'head_layers' must have 3 entries");
            std::copy(layers.begin(), layers.end(), cfg.head.layer_sizes.begin());
        } else if (cfg.backbone_name != "custom") {
            cfg.head.layer_sizes = head_preset(cfg.backbone_name).layer_sizes;
        }
        cfg.head.dropout_p = j.value("dropout_p", 0.1);
        cfg.head.input_dim = cfg.backbone.feature_dim();  // follows the output mode
        cfg.att.heads = j.value("att_heads", 4);
        cfg.att.dim = cfg.backbone.feature_dim();
        cfg.agg.depth = j.value("agg_depth", 1);
        cfg.agg.heads = j.value("agg_heads", 2);
        cfg.agg.dim = cfg.backbone.feature_dim();
        cfg.agg.slots = std::max(32, scale_by_name(cfg.scale).tile_count());
        if (j.contains("norm_mean")) {
            auto v = j["norm_mean"].get<std::vector<double>>();
            if (v.size() != 3) throw ConfigError("config field 'norm_mean' must have 3 entries");
            std::copy(v.begin(), v.end(), cfg.norm_mean.begin());
        }
        if (j.contains("norm_std")) {
            auto v = j["norm_std"].get<std::vector<double>>();
            if (v.size() != 3) throw ConfigError("config field 'norm_std' must have 3 entries");
            std::copy(v.begin(), v.end(), cfg.norm_std.begin());
        }
        cfg.seed = j.value("seed", uint64_t{0});
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return cfg;
}

TrainConfig train_config_from_cli_json(const json& j) {
    TrainConfig tc;
    try {
        tc.epochs = j.value("epochs", 30);
        tc.batch_size = j.value("batch_size", 8);
        tc.lr = j.value("lr", 1e-4);
        tc.weight_decay = j.value("weight_decay", 1e-2);
        tc.seed = j.value("seed", uint64_t{0});
        tc.early_stop_patience = j.value("early_stop_patience", 0);
        if (j.contains("freeze")) {
            tc.freeze = freeze_mode_from_name(j["freeze"].get<std::string>());
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return tc;
}

int cmd_infer(const std::string& model_dir, const std::string& manifest_path,
              const std::string& input_dir, const std::string& out_path, int threads) {
    SlideModel model = load_bundle(model_dir);
    auto inputs = gather_inputs(manifest_path, input_dir);
    if (inputs.empty()) {
        std::cerr << "infer: empty input set\n";
        return kExitEmptyInput;
    }
    InferOptions opts;
    opts.threads = threads;
    auto verdicts = infer_batch(model, inputs, opts);
    if (out_path.empty()) {
        for (const auto& v : verdicts) std::cout << verdict_to_json(v) << '\n';
    } else {
        write_verdicts_jsonl(verdicts, out_path);
    }
    size_t errors = 0;
    for (const auto& v : verdicts) {
        if (!v.ok) ++errors;
    }
    std::cerr << "infer: " << verdicts.size() - errors << " scored, " << errors << " errors\n";
    return kExitOk;
}

int cmd_eval(const std::string& model_dir, const std::string& manifest_path,
             const std::string& out_path, int threads) {
    SlideModel model = load_bundle(model_dir);
    Manifest manifest = load_manifest(manifest_path);
    InferOptions opts;
    opts.threads = threads;
    auto reports = evaluate_manifest(model, manifest, opts);
    std::cout << "dataset,acc,f1,auroc\n";
    for (const auto& r : reports) std::cout << r.metrics.to_csv_row(r.dataset) << '\n';
    if (!out_path.empty()) {
        write_eval_csv(reports, out_path);
        fs::path json_path = out_path;
        json_path.replace_extension(".json");
        std::ofstream out(json_path);
        out << eval_reports_to_json(reports) << '\n';
    }
    return kExitOk;
}

int cmd_train(const std::string& config_path, const std::optional<uint64_t>& seed_flag) {
    json j = load_json_file(config_path, "train config");
    std::string manifest_path, out_dir;
    try {
        manifest_path = j.at("manifest").get<std::string>();
        out_dir = j.at("out").get<std::string>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    ModelConfig mc = model_config_from_cli_json(j);
    TrainConfig tc = train_config_from_cli_json(j);
    tc.seed = resolve_seed(seed_flag, tc.seed);

    Manifest manifest = load_manifest(manifest_path);
    fs::create_directories(out_dir);
    const fs::path log_path = j.value("epoch_log", (fs::path(out_dir) / "epochs.jsonl").string());
    std::ofstream log(log_path);
    if (!log) throw IoError("cannot write epoch log: " + log_path.string());

    TrainResult result = train(manifest, mc, tc, {}, [&](const EpochStats& s) {
        json rec{{"epoch", s.epoch},
                 {"train_loss", s.train_loss},
                 {"train_acc", s.train_acc},
                 {"val_loss", s.val_loss},
                 {"val_acc", s.val_acc}};
        log << rec.dump() << '\n';
        log.flush();
        std::cerr << "epoch " << s.epoch << ": train_loss " << s.train_loss << " val_acc "
                  << s.val_acc << '\n';
    });
    save_bundle(result.model, out_dir);
    json summary{{"out", out_dir},
                 {"best_epoch", result.best_epoch},
                 {"best_val_acc", result.best_val_acc},
                 {"epochs_run", result.log.size()},
                 {"seed", tc.seed}};
    std::cout << summary.dump() << '\n';
    return kExitOk;
}

int cmd_hpo(const std::string& config_path, const std::optional<uint64_t>& seed_flag) {
    json j = load_json_file(config_path, "hpo config");
    StudyOptions opts;
    std::string objective;
    try {
        opts.log_path = j.at("out_log").get<std::string>();
        objective = j.value("objective", std::string("train"));
        opts.R = j.value("R", 27);
        opts.eta = j.value("eta", 3);
        opts.max_trials = j.value("max_trials", 256);
        opts.seed = j.value("seed", uint64_t{0});
        opts.tpe.gamma = j.value("gamma", 0.25);
        opts.tpe.n_startup = j.value("n_startup", 10);
        opts.tpe.n_candidates = j.value("n_candidates", 24);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("hpo config: ") + e.what());
    }
    opts.seed = resolve_seed(seed_flag, opts.seed);

    SearchSpace space = SearchSpace::default_head_space();
    if (j.contains("space")) {
        space.dims.clear();
        for (const auto& d : j["space"]) {
            try {
                space.dims.push_back({d.at("name").get<std::string>(), d.at("low").get<long>(),
                                      d.at("high").get<long>(), d.at("step").get<long>()});
            } catch (const json::exception& e) {
                throw ConfigError(std::string("hpo config: space: ") + e.what());
            }
        }
    }

    TrainFn fn;
    if (objective == "quadratic") {
        std::vector<long> target(space.dims.size());
        for (size_t i = 0; i < space.dims.size(); ++i) {
            target[i] = (space.dims[i].low + space.dims[i].high) / 2;
        }
        if (j.contains("quadratic_target")) {
            target = j["quadratic_target"].get<std::vector<long>>();
            if (target.size() != space.dims.size()) {
                throw ConfigError("hpo config: quadratic_target dims mismatch");
            }
        }
        fn = [target](const Point& p, int) {
            double acc = 0.0;
            for (size_t i = 0; i < p.size(); ++i) {
                const double d = static_cast<double>(p[i] - target[i]);
                acc -= d * d;
            }
            return acc;
        };
    } else if (objective == "train") {
        if (space.dims.size() != 3) {
            throw ConfigError("hpo config: the train objective searches the 3 head widths");
        }
        ModelConfig mc = model_config_from_cli_json(j);
        TrainConfig base_tc = train_config_from_cli_json(j);
        std::string manifest_path;
        try {
            manifest_path = j.at("manifest").get<std::string>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("hpo config: ") + e.what());
        }
        Manifest manifest = load_manifest(manifest_path);
        const uint64_t study_seed = opts.seed;
        fn = [mc, base_tc, manifest, study_seed](const Point& p, int budget) {
            ModelConfig trial_mc = mc;
            trial_mc.head.layer_sizes = {static_cast<int>(p[0]), static_cast<int>(p[1]),
                                         static_cast<int>(p[2])};
            TrainConfig tc = base_tc;
            tc.epochs = budget;
            tc.seed = study_seed;
            try {
                return train(manifest, trial_mc, tc).best_val_acc;
            } catch (const std::exception& e) {
                throw TrialFailure(e.what());
            }
        };
    } else {
        throw ConfigError("hpo config: unknown objective '" + objective + "'");
    }

    StudyState state = run_study(space, fn, opts);
    json summary{{"trials", state.trials.size()},
                 {"complete", state.count(TrialStatus::complete)},
                 {"pruned", state.count(TrialStatus::pruned)},
                 {"failed", state.count(TrialStatus::failed)},
                 {"log", opts.log_path.string()},
                 {"seed", opts.seed}};
    if (const Trial* best = state.best()) {
        json point;
        for (size_t i = 0; i < space.dims.size(); ++i) point[space.dims[i].name] = best->point[i];
        summary["best"] = {{"trial", best->id}, {"point", point}, {"value", best->final_value()}};
    }
    std::cout << summary.dump(2) << '\n';
    return kExitOk;
}

int cmd_bench(const std::string& model_dir, const std::string& backbone_name,
              const std::string& approaches, int iterations, int warmup,
              const std::string& out_path, const std::optional<uint64_t>& seed_flag) {
    BackboneConfig backbone;
    std::string name = backbone_name;
    if (!model_dir.empty()) {
        SlideModel model = load_bundle(model_dir);
        backbone = model.config().backbone;
        backbone.pos_rows = 224 / backbone.patch_size;
        backbone.pos_cols = 224 / backbone.patch_size;
        name = model.config().backbone_name;
    } else {
        backbone = backbone_preset(name);
    }

    std::vector<BenchTask> tasks;
    if (approaches.empty()) {
        tasks = default_bench_tasks();
    } else {
        std::string item;
        std::istringstream ss(approaches);
        while (std::getline(ss, item, ',')) {
            const auto colon = item.find(':');
            BenchTask t;
            if (colon == std::string::npos) {
                t.approach = approach_from_name(item);
                t.scale = canonical_scale_for(t.approach);
            } else {
                t.approach = approach_from_name(item.substr(0, colon));
                t.scale = item.substr(colon + 1);
            }
            tasks.push_back(std::move(t));
        }
    }

    const uint64_t seed = resolve_seed(seed_flag, 17);
    BenchReport report = run_bench(backbone, name, tasks, iterations, warmup, seed);
    if (out_path.empty()) {
        std::cout << report.to_json() << '\n';
    } else {
        std::ofstream out(out_path);
        if (!out) throw IoError("cannot write bench report: " + out_path);
        out << report.to_json() << '\n';
        std::cout << report.to_json() << '\n';
    }
    return kExitOk;
}

int cmd_preprocess(const std::string& manifest_path, const std::string& input_dir,
                   const std::string& out_dir, const std::string& scale_name, bool tiles,
                   const std::string& format) {
    const ScaleConfig& scale = scale_by_name(scale_name);
    auto inputs = gather_inputs(manifest_path, input_dir);
    if (inputs.empty()) {
        std::cerr << "preprocess: empty input set\n";
        return kExitEmptyInput;
    }
    fs::create_directories(out_dir);
    const std::string ext = format == "ppm" ? ".ppm" : ".png";
    size_t ok = 0, failed = 0;
    for (const auto& [id, path] : inputs) {
        try {
            const RasterImage scaled =
                resize_to_scale(stretch_to_canonical(orient_landscape(load_image(path))), scale);
            save_image(scaled, fs::path(out_dir) / (id + "_" + scale_name + ext));
            if (tiles) {
                TileBatch batch = tile(scaled, scale);
                for (int r = 0; r < batch.grid_rows; ++r) {
                    for (int c = 0; c < batch.grid_cols; ++c) {
                        char suffix[32];
                        std::snprintf(suffix, sizeof(suffix), "_%s_r%dc%d", scale_name.c_str(), r,
                                      c);
                        save_image(batch.tiles[static_cast<size_t>(r) * batch.grid_cols + c],
                                   fs::path(out_dir) / (id + suffix + ext));
                    }
                }
            }
            ++ok;
        } catch (const std::exception& e) {
            std::cerr << "preprocess: " << id << ": " << e.what() << '\n';
            ++failed;
        }
    }
    std::cerr << "preprocess: " << ok << " written, " << failed << " failed\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"thumbqc: FFPE vs frozen-section prediction from slide thumbnails"};
    app.require_subcommand(1);

    std::string config_path, manifest_path, model_dir, out_path, input_dir;
    std::optional<uint64_t> seed_flag;
    int threads = 0;

    auto* infer = app.add_subcommand("infer", "Score thumbnails and write verdicts JSONL");
    infer->add_option("input_dir", input_dir, "Directory of PNG/PPM thumbnails");
    infer->add_option("--manifest", manifest_path, "Manifest CSV/JSONL instead of a directory");
    infer->add_option("--model", model_dir, "Model bundle directory")->required();
    infer->add_option("--out", out_path, "Output JSONL path (default stdout)");
    infer->add_option("--threads", threads, "Worker threads (default: machine cores)");
    infer->add_option("--seed", seed_flag, "Unused for infer; accepted for uniformity");

    std::string eval_manifest, eval_out;
    auto* eval = app.add_subcommand("eval", "Per-dataset accuracy/F1/AUROC table");
    eval->add_option("--model", model_dir, "Model bundle directory")->required();
    eval->add_option("--manifest", eval_manifest, "Labeled manifest")->required();
    eval->add_option("--out", eval_out, "CSV output path (JSON written alongside)");
    eval->add_option("--threads", threads, "Worker threads");

    auto* train_cmd = app.add_subcommand("train", "Train a model from a JSON config");
    train_cmd->add_option("--config", config_path, "Train config JSON")->required();
    train_cmd->add_option("--seed", seed_flag, "Overrides THUMBQC_SEED and the config seed");

    auto* hpo_cmd = app.add_subcommand("hpo", "TPE + Hyperband study (resumable)");
    hpo_cmd->add_option("--config", config_path, "Study config JSON")->required();
    hpo_cmd->add_option("--seed", seed_flag, "Overrides THUMBQC_SEED and the config seed");

    std::string bench_backbone = "desk", bench_approaches;
    int iterations = 20, warmup = 3;
    auto* bench = app.add_subcommand("bench", "Single-threaded latency benchmark");
    bench->add_option("--model", model_dir, "Model bundle (backbone config source)");
    bench->add_option("--backbone", bench_backbone, "Backbone preset when no bundle given");
    bench->add_option("--approaches", bench_approaches,
                      "Comma list, each 'name' or 'name:SCALE' (default: all five)");
    bench->add_option("--iterations", iterations, "Timed iterations per approach");
    bench->add_option("--warmup", warmup, "Warmup passes excluded from stats");
    bench->add_option("--out", out_path, "Report JSON path (default stdout)");
    bench->add_option("--seed", seed_flag, "Seed for the synthetic input");

    std::string pp_scale = "L", pp_format = "png";
    bool pp_tiles = false;
    auto* pp = app.add_subcommand("preprocess", "Orient, stretch, resize (and tile) thumbnails");
    pp->add_option("input_dir", input_dir, "Directory of PNG/PPM thumbnails");
    pp->add_option("--manifest", manifest_path, "Manifest CSV/JSONL instead of a directory");
    pp->add_option("--out", out_path, "Output directory")->required();
    pp->add_option("--scale", pp_scale, "Target scale: XS, S, M or L");
    pp->add_flag("--tiles", pp_tiles, "Also write the tile grid");
    pp->add_option("--format", pp_format, "png or ppm");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*infer) return cmd_infer(model_dir, manifest_path, input_dir, out_path, threads);
        if (*eval) return cmd_eval(model_dir, eval_manifest, eval_out, threads);
        if (*train_cmd) return cmd_train(config_path, seed_flag);
        if (*hpo_cmd) return cmd_hpo(config_path, seed_flag);
        if (*bench) {
            return cmd_bench(model_dir, bench_backbone, bench_approaches, iterations, warmup,
                             out_path, seed_flag);
        }
        if (*pp) {
            return cmd_preprocess(manifest_path, input_dir, out_path, pp_scale, pp_tiles,
                                  pp_format);
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const SchemaError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    }
    return kExitOk;
}
