#include "thumbqc/model.hpp"

#include <nlohmann/json.hpp>

#include "thumbqc/errors.hpp"

namespace thumbqc {

using nn::Tape;
using nn::Var;
using nlohmann::json;

Approach approach_from_name(const std::string& s) {
    if (s == "xs_slides") return Approach::xs_slides;
    if (s == "vit_upscaling") return Approach::vit_upscaling;
    if (s == "tiled_soft_vote") return Approach::tiled_soft_vote;
    if (s == "tiled_attention") return Approach::tiled_attention;
    if (s == "tiled_transformer") return Approach::tiled_transformer;
    throw InvalidInput("unknown approach: " + s);
}

std::string approach_name(Approach a) {
    switch (a) {
        case Approach::xs_slides: return "xs_slides";
        case Approach::vit_upscaling: return "vit_upscaling";
        case Approach::tiled_soft_vote: return "tiled_soft_vote";
        case Approach::tiled_attention: return "tiled_attention";
        case Approach::tiled_transformer: return "tiled_transformer";
    }
    throw InvalidInput("bad approach enum");
}

bool approach_is_tiled(Approach a) {
    return a == Approach::tiled_soft_vote || a == Approach::tiled_attention ||
           a == Approach::tiled_transformer;
}

bool approach_scale_compatible(Approach a, const std::string& scale_name) {
    if (a == Approach::xs_slides) return scale_name == "XS";
    if (a == Approach::vit_upscaling) return scale_name == "M";
    return scale_name == "M" || scale_name == "L";
}

void ModelConfig::validate() const {
    backbone.validate();
    head.validate();
    scale_by_name(scale);
    if (!approach_scale_compatible(approach, scale)) {
        throw InvalidInput("approach " + approach_name(approach) + " is incompatible with scale " +
                           scale);
    }
    if (head.input_dim != backbone.feature_dim()) {
        throw InvalidInput("head input_dim " + std::to_string(head.input_dim) +
                           " != backbone feature dim " + std::to_string(backbone.feature_dim()));
    }
    if (approach == Approach::tiled_attention) {
        att.validate();
        if (att.dim != backbone.feature_dim()) {
            throw InvalidInput("attention pool dim != backbone feature dim");
        }
    }
    if (approach == Approach::tiled_transformer) {
        agg.validate();
        if (agg.dim != backbone.feature_dim()) {
            throw InvalidInput("tile transformer dim != backbone feature dim");
        }
        if (agg.slots < scale_by_name(scale).tile_count()) {
            throw InvalidInput("tile transformer slots < tile count of scale " + scale);
        }
    }
    for (double s : norm_std) {
        if (s <= 0.0) throw InvalidInput("norm std must be positive");
    }
}

std::string model_config_to_json(const ModelConfig& cfg) {
    json j;
    j["format"] = 1;
    j["approach"] = approach_name(cfg.approach);
    j["scale"] = cfg.scale;
    j["backbone_name"] = cfg.backbone_name;
    j["backbone"] = {{"patch_size", cfg.backbone.patch_size},
                     {"depth", cfg.backbone.depth},
                     {"heads", cfg.backbone.heads},
                     {"embed_dim", cfg.backbone.embed_dim},
                     {"mlp_ratio", cfg.backbone.mlp_ratio},
                     {"n_register_tokens", cfg.backbone.n_register_tokens},
                     {"output_mode", output_mode_name(cfg.backbone.output_mode)},
                     {"pos_rows", cfg.backbone.pos_rows},
                     {"pos_cols", cfg.backbone.pos_cols}};
    j["head"] = {{"layer_sizes", cfg.head.layer_sizes},
                 {"dropout_p", cfg.head.dropout_p},
                 {"input_dim", cfg.head.input_dim}};
    j["attention_pool"] = {{"heads", cfg.att.heads}, {"dim", cfg.att.dim}};
    j["tile_transformer"] = {{"depth", cfg.agg.depth},
                             {"heads", cfg.agg.heads},
                             {"dim", cfg.agg.dim},
                             {"slots", cfg.agg.slots}};
    j["norm_mean"] = cfg.norm_mean;
    j["norm_std"] = cfg.norm_std;
    j["seed"] = cfg.seed;
    return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config: malformed JSON: ") + e.what());
    }
    try {
        ModelConfig cfg;
        cfg.approach = approach_from_name(j.at("approach").get<std::string>());
        cfg.scale = j.at("scale").get<std::string>();
        cfg.backbone_name = j.value("backbone_name", std::string("desk"));
        const json& b = j.at("backbone");
        cfg.backbone.patch_size = b.at("patch_size").get<int>();
        cfg.backbone.depth = b.at("depth").get<int>();
        cfg.backbone.heads = b.at("heads").get<int>();
        cfg.backbone.embed_dim = b.at("embed_dim").get<int>();
        cfg.backbone.mlp_ratio = b.at("mlp_ratio").get<double>();
        cfg.backbone.n_register_tokens = b.at("n_register_tokens").get<int>();
        cfg.backbone.output_mode = output_mode_from_name(b.at("output_mode").get<std::string>());
        cfg.backbone.pos_rows = b.at("pos_rows").get<int>();
        cfg.backbone.pos_cols = b.at("pos_cols").get<int>();
        const json& h = j.at("head");
        auto sizes = h.at("layer_sizes").get<std::vector<int>>();
        if (sizes.size() != 3) {
            throw ConfigError("model config: head.layer_sizes must have 3 entries");
        }
        std::copy(sizes.begin(), sizes.end(), cfg.head.layer_sizes.begin());
        cfg.head.dropout_p = h.at("dropout_p").get<double>();
        cfg.head.input_dim = h.at("input_dim").get<int>();
        if (j.contains("attention_pool")) {
            cfg.att.heads = j["attention_pool"].at("heads").get<int>();
            cfg.att.dim = j["attention_pool"].at("dim").get<int>();
        }
        if (j.contains("tile_transformer")) {
            const json& t = j["tile_transformer"];
            cfg.agg.depth = t.at("depth").get<int>();
            cfg.agg.heads = t.at("heads").get<int>();
            cfg.agg.dim = t.at("dim").get<int>();
            cfg.agg.slots = t.at("slots").get<int>();
        }
        auto mean = j.at("norm_mean").get<std::vector<double>>();
        auto stdev = j.at("norm_std").get<std::vector<double>>();
        if (mean.size() != 3 || stdev.size() != 3) {
            throw ConfigError("model config: norm_mean/norm_std must have 3 entries");
        }
        std::copy(mean.begin(), mean.end(), cfg.norm_mean.begin());
        std::copy(stdev.begin(), stdev.end(), cfg.norm_std.begin());
        cfg.seed = j.value("seed", uint64_t{0});
        return cfg;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
}

SlideModel SlideModel::create(ModelConfig cfg, uint64_t seed) {
    cfg.seed = seed;
    // vit_upscaling configs arrive with the base 224/patch grid; validate
    // against the adapted M-scale grid they will end up with.
    ModelConfig check = cfg;
    if (cfg.approach == Approach::vit_upscaling) {
        check.backbone.pos_rows = scale_by_name(cfg.scale).target_height / cfg.backbone.patch_size;
        check.backbone.pos_cols = scale_by_name(cfg.scale).target_width / cfg.backbone.patch_size;
    }
    check.validate();

    SlideModel m;
    m.cfg_ = std::move(cfg);
    std::mt19937 rng(static_cast<uint32_t>(seed ^ (seed >> 32)));
    init_backbone(m.params_, m.cfg_.backbone, rng);
    init_head(m.params_, m.cfg_.head, rng);
    if (m.cfg_.approach == Approach::tiled_attention) {
        init_attention_pool(m.params_, m.cfg_.att, rng);
    } else if (m.cfg_.approach == Approach::tiled_transformer) {
        init_tile_transformer(m.params_, m.cfg_.agg, rng);
    }
    if (m.cfg_.approach == Approach::vit_upscaling) {
        const ScaleConfig& sc = scale_by_name(m.cfg_.scale);
        adapt_pos_grid(m.params_, m.cfg_.backbone, sc.target_height / m.cfg_.backbone.patch_size,
                       sc.target_width / m.cfg_.backbone.patch_size);
    }
    return m;
}

SlideModel SlideModel::from_config(ModelConfig cfg) {
    cfg.validate();
    SlideModel m;
    m.cfg_ = std::move(cfg);
    std::mt19937 rng(static_cast<uint32_t>(m.cfg_.seed ^ (m.cfg_.seed >> 32)));
    init_backbone(m.params_, m.cfg_.backbone, rng);
    init_head(m.params_, m.cfg_.head, rng);
    if (m.cfg_.approach == Approach::tiled_attention) {
        init_attention_pool(m.params_, m.cfg_.att, rng);
    } else if (m.cfg_.approach == Approach::tiled_transformer) {
        init_tile_transformer(m.params_, m.cfg_.agg, rng);
    }
    return m;
}

RasterImage SlideModel::preprocess(const RasterImage& thumbnail) const {
    const RasterImage canonical = stretch_to_canonical(orient_landscape(thumbnail));
    return resize_to_scale(canonical, scale_by_name(cfg_.scale));
}

nn::Var SlideModel::tile_features(Tape& tape, const RasterImage& scaled) {
    const ScaleConfig& sc = scale_by_name(cfg_.scale);
    TileBatch batch = tile(scaled, sc);
    std::vector<Var> feats;
    feats.reserve(batch.tiles.size());
    for (const RasterImage& t : batch.tiles) {
        feats.push_back(backbone_forward(tape, params_, cfg_.backbone,
                                         normalize(t, cfg_.norm_mean, cfg_.norm_std)));
    }
    return tape.concat_rows(feats);
}

nn::Var SlideModel::batch_probabilities(Tape& tape, const std::vector<const RasterImage*>& inputs,
                                        const RunMode& mode) {
    if (inputs.empty()) throw InvalidInput("batch_probabilities: empty batch");
    const ScaleConfig& sc = scale_by_name(cfg_.scale);
    for (const RasterImage* img : inputs) {
        if (img->height != sc.target_height || img->width != sc.target_width) {
            throw InvalidInput("batch_probabilities: input dims do not match scale " + cfg_.scale);
        }
    }
    const int b = static_cast<int>(inputs.size());

    if (cfg_.approach == Approach::xs_slides || cfg_.approach == Approach::vit_upscaling) {
        std::vector<Var> feats;
        feats.reserve(inputs.size());
        for (const RasterImage* img : inputs) {
            feats.push_back(backbone_forward(tape, params_, cfg_.backbone,
                                             normalize(*img, cfg_.norm_mean, cfg_.norm_std)));
        }
        Var logits = head_logits(tape, params_, cfg_.head, tape.concat_rows(feats), mode);
        return tape.sigmoid(logits);
    }

    if (cfg_.approach == Approach::tiled_soft_vote) {
        // One head pass over every tile in the batch, then per-slide voting.
        std::vector<Var> all;
        all.reserve(inputs.size());
        for (const RasterImage* img : inputs) all.push_back(tile_features(tape, *img));
        Var logits = head_logits(tape, params_, cfg_.head, tape.concat_rows(all), mode);
        const int tiles = sc.tile_count();
        std::vector<Var> probs;
        probs.reserve(inputs.size());
        for (int i = 0; i < b; ++i) {
            probs.push_back(soft_vote(tape, tape.slice_rows(logits, i * tiles, (i + 1) * tiles)));
        }
        return tape.concat_rows(probs);
    }

    std::vector<Var> pooled;
    pooled.reserve(inputs.size());
    for (const RasterImage* img : inputs) {
        Var feats = tile_features(tape, *img);
        if (cfg_.approach == Approach::tiled_attention) {
            pooled.push_back(attention_pool(tape, params_, cfg_.att, feats).pooled);
        } else {
            pooled.push_back(transformer_aggregate(tape, params_, cfg_.agg, feats));
        }
    }
    Var logits = head_logits(tape, params_, cfg_.head, tape.concat_rows(pooled), mode);
    return tape.sigmoid(logits);
}

double SlideModel::infer_probability(const RasterImage& thumbnail) const {
    const RasterImage scaled = preprocess(thumbnail);
    Tape tape;
    tape.set_inference(true);
    // Eval-mode forwards never write parameters or running stats.
    auto* self = const_cast<SlideModel*>(this);
    Var p = self->batch_probabilities(tape, {&scaled}, RunMode{});
    return tape.val(p)[0];
}

void SlideModel::apply_freeze(FreezeMode mode) {
    apply_freeze_mask(params_, freeze_mask(cfg_.backbone, mode));
}

}  // namespace thumbqc
