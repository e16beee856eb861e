#include "thumbqc/heads.hpp"

#include <cmath>

#include "thumbqc/backbone.hpp"
#include "thumbqc/errors.hpp"

namespace thumbqc {

using nn::Tape;
using nn::Var;

void HeadConfig::validate() const {
    for (int w : layer_sizes) {
        if (w < 1) throw InvalidInput("head config: layer width must be >= 1");
    }
    if (dropout_p < 0.0 || dropout_p >= 1.0) throw InvalidInput("head config: bad dropout_p");
    if (input_dim < 1) throw InvalidInput("head config: bad input_dim");
}

HeadConfig head_preset(const std::string& backbone_name) {
    HeadConfig c;
    if (backbone_name == "transpath") {
        c.layer_sizes = {2048, 1920, 128};
        c.input_dim = 384;
    } else if (backbone_name == "uni") {
        c.layer_sizes = {1600, 64, 192};
        c.input_dim = 2048;
    } else if (backbone_name == "virchow2") {
        c.layer_sizes = {1728, 64, 192};
        c.input_dim = 2560;
    } else if (backbone_name == "h-optimus-0") {
        c.layer_sizes = {1856, 192, 128};
        c.input_dim = 3072;
    } else if (backbone_name == "desk") {
        c.layer_sizes = {128, 64, 32};
        c.input_dim = 64;
    } else {
        throw InvalidInput("unknown head preset: " + backbone_name);
    }
    return c;
}

namespace {

void add_hidden(nn::ParamSet& ps, const std::string& prefix, int in, int out, std::mt19937& rng) {
    nn::Parameter& w = ps.add(prefix + "fc.w", {in, out});
    w.weight_decay = true;
    std::normal_distribution<nn::real> dist(0.0, std::sqrt(2.0 / in));
    for (size_t i = 0; i < w.value.size(); ++i) w.value[i] = dist(rng);
    ps.add(prefix + "fc.b", {1, out});
    ps.add(prefix + "bn.g", {1, out}).value.fill(1.0);
    ps.add(prefix + "bn.b", {1, out});
    ps.add_buffer(prefix + "bn.mean", {1, out});
    ps.add_buffer(prefix + "bn.var", {1, out}).value.fill(1.0);
}

}  // namespace

void init_head(nn::ParamSet& params, const HeadConfig& cfg, std::mt19937& rng) {
    cfg.validate();
    int in = cfg.input_dim;
    for (int i = 0; i < 3; ++i) {
        add_hidden(params, "head.h" + std::to_string(i) + ".", in, cfg.layer_sizes[i], rng);
        in = cfg.layer_sizes[i];
    }
    nn::Parameter& w = params.add("head.out.w", {in, 1});
    w.weight_decay = true;
    std::normal_distribution<nn::real> dist(0.0, std::sqrt(1.0 / in));
    for (size_t i = 0; i < w.value.size(); ++i) w.value[i] = dist(rng);
    params.add("head.out.b", {1, 1});
}

Var hidden_layer(Tape& tape, nn::ParamSet& params, const std::string& prefix, double dropout_p,
                 Var x, const RunMode& mode) {
    x = tape.matmul(x, tape.param(params.get(prefix + "fc.w")));
    x = tape.add_rowvec(x, tape.param(params.get(prefix + "fc.b")));
    x = tape.batchnorm(x, tape.param(params.get(prefix + "bn.g")),
                       tape.param(params.get(prefix + "bn.b")), params.get(prefix + "bn.mean"),
                       params.get(prefix + "bn.var"), mode.training);
    x = tape.relu(x);
    if (mode.training && dropout_p > 0.0) {
        if (!mode.dropout_rng) throw InvalidInput("hidden_layer: training needs a dropout rng");
        x = tape.dropout(x, dropout_p, *mode.dropout_rng, true);
    }
    return x;
}

Var head_logits(Tape& tape, nn::ParamSet& params, const HeadConfig& cfg, Var features,
                const RunMode& mode) {
    if (tape.val(features).cols() != cfg.input_dim) {
        throw InvalidInput("head_logits: feature dim " +
                           std::to_string(tape.val(features).cols()) + " != input_dim " +
                           std::to_string(cfg.input_dim));
    }
    Var x = features;
    for (int i = 0; i < 3; ++i) {
        x = hidden_layer(tape, params, "head.h" + std::to_string(i) + ".", cfg.dropout_p, x, mode);
    }
    x = tape.matmul(x, tape.param(params.get("head.out.w")));
    return tape.add_rowvec(x, tape.param(params.get("head.out.b")));
}

Var soft_vote(Tape& tape, Var tile_logits) {
    const int n = tape.val(tile_logits).rows();
    if (tape.val(tile_logits).cols() != 1 || n < 1) {
        throw InvalidInput("soft_vote: expected [n,1] logits, n >= 1");
    }
    Var p = tape.sigmoid(tile_logits);
    return tape.mean_rows(p, 0, n);
}

void AttentionPoolConfig::validate() const {
    if (heads < 1 || dim < 1 || dim % heads != 0) {
        throw InvalidInput("attention pool config: heads must divide dim");
    }
}

void init_attention_pool(nn::ParamSet& params, const AttentionPoolConfig& cfg, std::mt19937& rng) {
    cfg.validate();
    const int d = cfg.dim;
    init_trunc_normal(params.add("agg.att.q", {cfg.heads, d / cfg.heads}).value, 0.02, rng);
    for (const char* n : {"wk", "wv", "wo"}) {
        nn::Parameter& w = params.add(std::string("agg.att.") + n + ".w", {d, d});
        w.weight_decay = true;
        init_trunc_normal(w.value, 0.02, rng);
        params.add(std::string("agg.att.") + n + ".b", {1, d});
    }
}

AttentionPoolOut attention_pool(Tape& tape, nn::ParamSet& params, const AttentionPoolConfig& cfg,
                                Var features) {
    cfg.validate();
    const nn::Tensor& f = tape.val(features);
    if (f.rows() < 1) throw InvalidInput("attention_pool: needs at least one tile");
    if (f.cols() != cfg.dim) throw InvalidInput("attention_pool: feature dim mismatch");

    auto proj = [&](const char* n) {
        Var x = tape.matmul(features, tape.param(params.get(std::string("agg.att.") + n + ".w")));
        return tape.add_rowvec(x, tape.param(params.get(std::string("agg.att.") + n + ".b")));
    };
    Var keys = proj("wk");
    Var values = proj("wv");
    Var q = tape.param(params.get("agg.att.q"));

    const int dh = cfg.dim / cfg.heads;
    const nn::real s = 1.0 / std::sqrt(static_cast<nn::real>(dh));
    AttentionPoolOut out;
    std::vector<Var> pooled_heads;
    for (int h = 0; h < cfg.heads; ++h) {
        Var qh = tape.slice_rows(q, h, h + 1);
        Var kh = tape.slice_cols(keys, h * dh, (h + 1) * dh);
        Var vh = tape.slice_cols(values, h * dh, (h + 1) * dh);
        Var scores = tape.scale(tape.matmul_nt(qh, kh), s);  // [1, n]
        Var alpha = tape.softmax_rows(scores);
        out.head_weights.push_back(alpha);
        pooled_heads.push_back(tape.matmul(alpha, vh));  // [1, dh]
    }
    Var cat = tape.concat_cols(pooled_heads);
    cat = tape.matmul(cat, tape.param(params.get("agg.att.wo.w")));
    out.pooled = tape.add_rowvec(cat, tape.param(params.get("agg.att.wo.b")));
    return out;
}

void TileTransformerConfig::validate() const {
    if (depth < 0 || heads < 1 || dim < 1 || dim % heads != 0 || slots < 1) {
        throw InvalidInput("tile transformer config: bad dims");
    }
}

void init_tile_transformer(nn::ParamSet& params, const TileTransformerConfig& cfg,
                           std::mt19937& rng) {
    cfg.validate();
    init_trunc_normal(params.add("agg.tf.cls", {1, cfg.dim}).value, 0.02, rng);
    init_trunc_normal(params.add("agg.tf.pos", {cfg.slots, cfg.dim}).value, 0.02, rng);
    init_encoder_blocks(params, "agg.tf.blocks.", {cfg.depth, cfg.heads, cfg.dim, 4.0}, rng);
}

Var transformer_aggregate(Tape& tape, nn::ParamSet& params, const TileTransformerConfig& cfg,
                          Var features) {
    const nn::Tensor& f = tape.val(features);
    if (f.rows() > cfg.slots) {
        throw InvalidInput("transformer_aggregate: " + std::to_string(f.rows()) +
                           " tiles exceed " + std::to_string(cfg.slots) + " slots");
    }
    if (f.cols() != cfg.dim) throw InvalidInput("transformer_aggregate: feature dim mismatch");
    Var pos = tape.slice_rows(tape.param(params.get("agg.tf.pos")), 0, f.rows());
    Var x = tape.add(features, pos);
    std::vector<Var> parts = {tape.param(params.get("agg.tf.cls")), x};
    Var seq = tape.concat_rows(parts);
    seq = encoder_blocks(tape, params, "agg.tf.blocks.", {cfg.depth, cfg.heads, cfg.dim, 4.0}, seq);
    return tape.slice_rows(seq, 0, 1);
}

}  // namespace thumbqc
