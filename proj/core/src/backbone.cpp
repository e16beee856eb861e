#include "thumbqc/backbone.hpp"

#include <cmath>

#include "thumbqc/errors.hpp"

namespace thumbqc {

using nn::Tape;
using nn::Tensor;
using nn::Var;

void BackboneConfig::validate() const {
    if (patch_size <= 0 || depth < 0 || heads <= 0 || embed_dim <= 0) {
        throw InvalidInput("backbone config: non-positive dimension");
    }
    if (embed_dim % heads != 0) throw InvalidInput("backbone config: embed_dim % heads != 0");
    if (mlp_ratio <= 0.0) throw InvalidInput("backbone config: mlp_ratio must be > 0");
    if (n_register_tokens < 0) throw InvalidInput("backbone config: negative register count");
    if (pos_rows <= 0 || pos_cols <= 0) throw InvalidInput("backbone config: bad pos grid");
}

BackboneConfig backbone_preset(const std::string& name) {
    BackboneConfig c;
    if (name == "desk") {
        c = {16, 2, 4, 64, 4.0, 0, OutputMode::class_token, 14, 14};
    } else if (name == "transpath") {  // ViT-S/16
        c = {16, 12, 6, 384, 4.0, 0, OutputMode::class_token, 14, 14};
    } else if (name == "uni") {  // ViT-L/16
        c = {16, 24, 16, 1024, 4.0, 0, OutputMode::class_plus_mean_patch, 14, 14};
    } else if (name == "virchow2") {  // ViT-H/14
        c = {14, 32, 16, 1280, 4.0, 0, OutputMode::class_plus_mean_patch, 16, 16};
    } else if (name == "h-optimus-0") {  // ViT-g/14 with register tokens
        c = {14, 40, 24, 1536, 4.0, 4, OutputMode::class_plus_mean_patch, 16, 16};
    } else {
        throw InvalidInput("unknown backbone preset: " + name);
    }
    return c;
}

std::string output_mode_name(OutputMode m) {
    return m == OutputMode::class_token ? "class_token" : "class_plus_mean_patch";
}

OutputMode output_mode_from_name(const std::string& s) {
    if (s == "class_token") return OutputMode::class_token;
    if (s == "class_plus_mean_patch") return OutputMode::class_plus_mean_patch;
    throw InvalidInput("unknown output mode: " + s);
}

FreezeMode freeze_mode_from_name(const std::string& s) {
    if (s == "full") return FreezeMode::full;
    if (s == "attention_and_pos") return FreezeMode::attention_and_pos;
    throw InvalidInput("unknown freeze mode: " + s);
}

std::string freeze_mode_name(FreezeMode m) {
    return m == FreezeMode::full ? "full" : "attention_and_pos";
}

PositionalGrid interpolate_pos_embed(const PositionalGrid& grid, int new_rows, int new_cols) {
    if (new_rows < 1 || new_cols < 1) throw InvalidInput("interpolate_pos_embed: bad target dims");
    if (grid.embeddings.rows() != grid.rows * grid.cols) {
        throw InvalidInput("interpolate_pos_embed: grid shape mismatch");
    }
    PositionalGrid out;
    out.rows = new_rows;
    out.cols = new_cols;
    out.extra_tokens = grid.extra_tokens;
    const int d = grid.embeddings.cols();
    out.embeddings = Tensor({new_rows * new_cols, d});
    if (new_rows == grid.rows && new_cols == grid.cols) {
        out.embeddings = grid.embeddings;
        return out;
    }
    // Corner-aligned: dst index i maps to src coordinate i*(src-1)/(dst-1).
    const double ry = new_rows > 1 ? static_cast<double>(grid.rows - 1) / (new_rows - 1) : 0.0;
    const double rx = new_cols > 1 ? static_cast<double>(grid.cols - 1) / (new_cols - 1) : 0.0;
    for (int r = 0; r < new_rows; ++r) {
        const double fy = r * ry;
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, grid.rows - 1);
        const double wy = fy - y0;
        for (int c = 0; c < new_cols; ++c) {
            const double fx = c * rx;
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, grid.cols - 1);
            const double wx = fx - x0;
            for (int ch = 0; ch < d; ++ch) {
                const double a = grid.embeddings.at(y0 * grid.cols + x0, ch);
                const double b = grid.embeddings.at(y0 * grid.cols + x1, ch);
                const double e = grid.embeddings.at(y1 * grid.cols + x0, ch);
                const double f = grid.embeddings.at(y1 * grid.cols + x1, ch);
                const double top = (1.0 - wx) * a + wx * b;
                const double bot = (1.0 - wx) * e + wx * f;
                out.embeddings.at(r * new_cols + c, ch) = (1.0 - wy) * top + wy * bot;
            }
        }
    }
    return out;
}

namespace {

std::string block_prefix(int i) { return "backbone.blocks." + std::to_string(i) + "."; }

void add_linear(nn::ParamSet& ps, const std::string& name, int in, int out, std::mt19937& rng) {
    nn::Parameter& w = ps.add(name + ".w", {in, out});
    w.weight_decay = true;
    init_trunc_normal(w.value, 0.02, rng);
    ps.add(name + ".b", {1, out});
}

void add_norm(nn::ParamSet& ps, const std::string& name, int d) {
    ps.add(name + ".g", {1, d}).value.fill(1.0);
    ps.add(name + ".b", {1, d});
}

}  // namespace

void init_encoder_blocks(nn::ParamSet& params, const std::string& prefix, const EncoderDims& dims,
                         std::mt19937& rng) {
    const int d = dims.dim;
    const int hidden = static_cast<int>(d * dims.mlp_ratio);
    for (int i = 0; i < dims.depth; ++i) {
        const std::string p = prefix + std::to_string(i) + ".";
        add_norm(params, p + "ln1", d);
        add_linear(params, p + "attn.wq", d, d, rng);
        add_linear(params, p + "attn.wk", d, d, rng);
        add_linear(params, p + "attn.wv", d, d, rng);
        add_linear(params, p + "attn.wo", d, d, rng);
        add_norm(params, p + "ln2", d);
        add_linear(params, p + "mlp.fc1", d, hidden, rng);
        add_linear(params, p + "mlp.fc2", hidden, d, rng);
    }
}

void init_backbone(nn::ParamSet& params, const BackboneConfig& cfg, std::mt19937& rng) {
    cfg.validate();
    const int d = cfg.embed_dim;
    add_linear(params, "backbone.patch_embed", cfg.patch_dim(), d, rng);
    init_trunc_normal(params.add("backbone.cls", {1, d}).value, 0.02, rng);
    if (cfg.n_register_tokens > 0) {
        init_trunc_normal(params.add("backbone.reg", {cfg.n_register_tokens, d}).value, 0.02, rng);
    }
    init_trunc_normal(params.add("backbone.pos", {cfg.pos_rows * cfg.pos_cols, d}).value, 0.02,
                      rng);
    init_encoder_blocks(params, "backbone.blocks.",
                        {cfg.depth, cfg.heads, cfg.embed_dim, cfg.mlp_ratio}, rng);
    add_norm(params, "backbone.norm", d);
}

std::vector<std::string> backbone_param_names(const BackboneConfig& cfg) {
    std::vector<std::string> names = {"backbone.patch_embed.w", "backbone.patch_embed.b",
                                      "backbone.cls"};
    if (cfg.n_register_tokens > 0) names.push_back("backbone.reg");
    names.push_back("backbone.pos");
    for (int i = 0; i < cfg.depth; ++i) {
        const std::string p = block_prefix(i);
        for (const char* stem :
             {"ln1.g", "ln1.b", "attn.wq.w", "attn.wq.b", "attn.wk.w", "attn.wk.b", "attn.wv.w",
              "attn.wv.b", "attn.wo.w", "attn.wo.b", "ln2.g", "ln2.b", "mlp.fc1.w", "mlp.fc1.b",
              "mlp.fc2.w", "mlp.fc2.b"}) {
            names.push_back(p + stem);
        }
    }
    names.push_back("backbone.norm.g");
    names.push_back("backbone.norm.b");
    return names;
}

nn::Var patch_embed(Tape& tape, nn::ParamSet& params, const BackboneConfig& cfg,
                    const Tensor& img) {
    if (img.rank() != 3 || img.dim(2) != 3) {
        throw InvalidInput("patch_embed: expected [H,W,3] normalized image");
    }
    const int h = img.dim(0), w = img.dim(1), p = cfg.patch_size;
    if (h % p != 0 || w % p != 0) {
        throw InvalidInput("patch_embed: image dims not divisible by patch size");
    }
    const int gr = h / p, gc = w / p;
    if (gr != cfg.pos_rows || gc != cfg.pos_cols) {
        throw InvalidInput("patch_embed: token grid " + std::to_string(gr) + "x" +
                           std::to_string(gc) + " does not match position grid " +
                           std::to_string(cfg.pos_rows) + "x" + std::to_string(cfg.pos_cols));
    }

    // Flatten patches row-major: patch rows, then pixel rows, channels innermost.
    Tensor patches({gr * gc, cfg.patch_dim()});
    for (int pr = 0; pr < gr; ++pr) {
        for (int pc = 0; pc < gc; ++pc) {
            nn::real* dst = patches.data() + static_cast<size_t>(pr * gc + pc) * cfg.patch_dim();
            for (int r = 0; r < p; ++r) {
                const nn::real* src =
                    img.data() + ((static_cast<size_t>(pr * p + r) * w) + pc * p) * 3;
                std::copy(src, src + static_cast<size_t>(p) * 3, dst);
                dst += static_cast<size_t>(p) * 3;
            }
        }
    }

    Var x = tape.matmul(tape.constant(std::move(patches)), tape.param(params.get("backbone.patch_embed.w")));
    x = tape.add_rowvec(x, tape.param(params.get("backbone.patch_embed.b")));
    x = tape.add(x, tape.param(params.get("backbone.pos")));

    std::vector<Var> parts;
    parts.push_back(tape.param(params.get("backbone.cls")));
    if (cfg.n_register_tokens > 0) parts.push_back(tape.param(params.get("backbone.reg")));
    parts.push_back(x);
    return tape.concat_rows(parts);
}

namespace {

Var linear(Tape& tape, nn::ParamSet& ps, const std::string& name, Var x) {
    x = tape.matmul(x, tape.param(ps.get(name + ".w")));
    return tape.add_rowvec(x, tape.param(ps.get(name + ".b")));
}

Var mhsa(Tape& tape, nn::ParamSet& ps, const std::string& prefix, int n_heads, int dim, Var x) {
    Var q = linear(tape, ps, prefix + "attn.wq", x);
    Var k = linear(tape, ps, prefix + "attn.wk", x);
    Var v = linear(tape, ps, prefix + "attn.wv", x);
    const int dh = dim / n_heads;
    const nn::real s = 1.0 / std::sqrt(static_cast<nn::real>(dh));
    std::vector<Var> heads;
    heads.reserve(n_heads);
    for (int h = 0; h < n_heads; ++h) {
        Var qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
        Var kh = tape.slice_cols(k, h * dh, (h + 1) * dh);
        Var vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
        heads.push_back(tape.attention(qh, kh, vh, s));
    }
    Var o = tape.concat_cols(heads);
    return linear(tape, ps, prefix + "attn.wo", o);
}

}  // namespace

nn::Var encoder_blocks(Tape& tape, nn::ParamSet& params, const std::string& prefix,
                       const EncoderDims& dims, Var x) {
    for (int i = 0; i < dims.depth; ++i) {
        const std::string p = prefix + std::to_string(i) + ".";
        Var n1 = tape.layernorm(x, tape.param(params.get(p + "ln1.g")),
                                tape.param(params.get(p + "ln1.b")));
        x = tape.add(x, mhsa(tape, params, p, dims.heads, dims.dim, n1));
        Var n2 = tape.layernorm(x, tape.param(params.get(p + "ln2.g")),
                                tape.param(params.get(p + "ln2.b")));
        Var m = linear(tape, params, p + "mlp.fc1", n2);
        m = tape.gelu(m);
        m = linear(tape, params, p + "mlp.fc2", m);
        x = tape.add(x, m);
    }
    return x;
}

nn::Var encode(Tape& tape, nn::ParamSet& params, const BackboneConfig& cfg, Var tokens) {
    Var x = encoder_blocks(tape, params, "backbone.blocks.",
                           {cfg.depth, cfg.heads, cfg.embed_dim, cfg.mlp_ratio}, tokens);
    x = tape.layernorm(x, tape.param(params.get("backbone.norm.g")),
                       tape.param(params.get("backbone.norm.b")));
    Var cls = tape.slice_rows(x, 0, 1);
    if (cfg.output_mode == OutputMode::class_token) return cls;
    const int t = tape.val(x).rows();
    Var mean_patch = tape.mean_rows(x, cfg.extra_tokens(), t);
    std::vector<Var> parts = {cls, mean_patch};
    return tape.concat_cols(parts);
}

nn::Var backbone_forward(Tape& tape, nn::ParamSet& params, const BackboneConfig& cfg,
                         const Tensor& img) {
    return encode(tape, params, cfg, patch_embed(tape, params, cfg, img));
}

std::map<std::string, bool> freeze_mask(const BackboneConfig& cfg, FreezeMode mode) {
    std::map<std::string, bool> mask;
    for (const std::string& name : backbone_param_names(cfg)) {
        bool trainable = true;
        if (mode == FreezeMode::attention_and_pos) {
            trainable = name.find(".attn.") != std::string::npos || name == "backbone.pos";
        }
        mask[name] = trainable;
    }
    return mask;
}

void apply_freeze_mask(nn::ParamSet& params, const std::map<std::string, bool>& mask) {
    for (const auto& [name, trainable] : mask) {
        if (params.has(name)) params.get(name).trainable = trainable;
    }
}

PositionalGrid pos_grid_of(const nn::ParamSet& params, const BackboneConfig& cfg) {
    PositionalGrid g;
    g.rows = cfg.pos_rows;
    g.cols = cfg.pos_cols;
    g.embeddings = params.get("backbone.pos").value;
    std::vector<nn::real> extras;
    const Tensor& cls = params.get("backbone.cls").value;
    extras.insert(extras.end(), cls.raw().begin(), cls.raw().end());
    int n_extra = 1;
    if (cfg.n_register_tokens > 0) {
        const Tensor& reg = params.get("backbone.reg").value;
        extras.insert(extras.end(), reg.raw().begin(), reg.raw().end());
        n_extra += cfg.n_register_tokens;
    }
    g.extra_tokens = Tensor::from({n_extra, cfg.embed_dim}, std::move(extras));
    return g;
}

void adapt_pos_grid(nn::ParamSet& params, BackboneConfig& cfg, int new_rows, int new_cols) {
    PositionalGrid g = pos_grid_of(params, cfg);
    PositionalGrid g2 = interpolate_pos_embed(g, new_rows, new_cols);
    nn::Parameter& pos = params.get("backbone.pos");
    pos.value = g2.embeddings;
    pos.grad = Tensor(pos.value.shape());
    cfg.pos_rows = new_rows;
    cfg.pos_cols = new_cols;
}

}  // namespace thumbqc
