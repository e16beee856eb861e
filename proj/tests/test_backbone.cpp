#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "test_util.hpp"
#include "thumbqc/backbone.hpp"
#include "thumbqc/errors.hpp"
#include "thumbqc/image.hpp"

using namespace thumbqc;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

nn::Tensor normalized_random(int h, int w, uint32_t seed) {
    return normalize(testutil::random_image(h, w, seed), {0.5, 0.5, 0.5}, {0.5, 0.5, 0.5});
}

BackboneConfig tiny_cfg(int patch, int rows, int cols) {
    BackboneConfig c;
    c.patch_size = patch;
    c.depth = 1;
    c.heads = 2;
    c.embed_dim = 16;
    c.n_register_tokens = 0;
    c.pos_rows = rows;
    c.pos_cols = cols;
    return c;
}

}  // namespace

TEST_CASE("patch_embed: token counts follow (H/P)(W/P)") {
    std::mt19937 rng(1);

    {
        BackboneConfig cfg = tiny_cfg(16, 14, 14);
        nn::ParamSet ps;
        init_backbone(ps, cfg, rng);
        Tape tape;
        Var tokens = patch_embed(tape, ps, cfg, normalized_random(224, 224, 2));
        CHECK(tape.val(tokens).rows() == 1 + 196);  // class + 14x14
        CHECK(tape.val(tokens).cols() == 16);
    }
    {
        BackboneConfig cfg = tiny_cfg(14, 16, 16);
        nn::ParamSet ps;
        init_backbone(ps, cfg, rng);
        Tape tape;
        Var tokens = patch_embed(tape, ps, cfg, normalized_random(224, 224, 3));
        CHECK(tape.val(tokens).rows() == 1 + 256);  // 16x16 grid
    }
    {
        BackboneConfig cfg = tiny_cfg(16, 28, 56);
        nn::ParamSet ps;
        init_backbone(ps, cfg, rng);
        Tape tape;
        Var tokens = patch_embed(tape, ps, cfg, normalized_random(448, 896, 4));
        CHECK(tape.val(tokens).rows() == 1 + 1568);  // the upscaled token count
    }
}

TEST_CASE("patch_embed: indivisible dims and grid mismatches rejected") {
    std::mt19937 rng(5);
    BackboneConfig cfg = tiny_cfg(16, 14, 14);
    nn::ParamSet ps;
    init_backbone(ps, cfg, rng);
    Tape tape;
    CHECK_THROWS_AS(patch_embed(tape, ps, cfg, normalized_random(225, 224, 6)), InvalidInput);
    CHECK_THROWS_AS(patch_embed(tape, ps, cfg, normalized_random(448, 448, 7)), InvalidInput);
}

TEST_CASE("forward: feature length is D or 2D by output mode") {
    std::mt19937 rng(8);
    {
        BackboneConfig cfg;
        cfg.patch_size = 16;
        cfg.depth = 1;
        cfg.heads = 4;
        cfg.embed_dim = 384;
        cfg.output_mode = OutputMode::class_token;
        nn::ParamSet ps;
        init_backbone(ps, cfg, rng);
        Tape tape;
        Var f = backbone_forward(tape, ps, cfg, normalized_random(224, 224, 9));
        CHECK(tape.val(f).rows() == 1);
        CHECK(tape.val(f).cols() == 384);
    }
    {
        BackboneConfig cfg;
        cfg.patch_size = 16;
        cfg.depth = 1;
        cfg.heads = 4;
        cfg.embed_dim = 1024;
        cfg.output_mode = OutputMode::class_plus_mean_patch;
        nn::ParamSet ps;
        init_backbone(ps, cfg, rng);
        Tape tape;
        Var f = backbone_forward(tape, ps, cfg, normalized_random(224, 224, 10));
        CHECK(tape.val(f).cols() == 2048);
    }
}

TEST_CASE("forward: depth 0 returns the class token after the final norm") {
    std::mt19937 rng(11);
    BackboneConfig cfg = tiny_cfg(16, 2, 2);
    cfg.depth = 0;
    nn::ParamSet ps;
    init_backbone(ps, cfg, rng);
    Tape tape;
    Var f = backbone_forward(tape, ps, cfg, normalized_random(32, 32, 12));

    // Hand computation: layernorm of the class embedding row.
    const Tensor& cls = ps.get("backbone.cls").value;
    const Tensor& g = ps.get("backbone.norm.g").value;
    const Tensor& b = ps.get("backbone.norm.b").value;
    const int d = cfg.embed_dim;
    double mean = 0.0;
    for (int i = 0; i < d; ++i) mean += cls[i];
    mean /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) var += (cls[i] - mean) * (cls[i] - mean);
    var /= d;
    for (int i = 0; i < d; ++i) {
        const double want = g[i] * (cls[i] - mean) / std::sqrt(var + 1e-5) + b[i];
        CHECK(tape.val(f)[i] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("forward: register tokens are excluded from the mean patch token") {
    std::mt19937 rng(13);
    BackboneConfig cfg = tiny_cfg(16, 2, 2);
    cfg.depth = 0;
    cfg.n_register_tokens = 3;
    cfg.output_mode = OutputMode::class_plus_mean_patch;
    nn::ParamSet ps;
    init_backbone(ps, cfg, rng);
    nn::Tensor img = normalized_random(32, 32, 14);

    Tape tape;
    Var tokens = patch_embed(tape, ps, cfg, img);
    REQUIRE(tape.val(tokens).rows() == 1 + 3 + 4);
    Var f = encode(tape, ps, cfg, tokens);
    REQUIRE(tape.val(f).cols() == 32);

    // With depth 0 the mean patch half must equal the mean of the final-norm
    // patch rows only (rows 4..7 of the normed sequence).
    Tape ref;
    Var seq = patch_embed(ref, ps, cfg, img);
    Var normed = ref.layernorm(seq, ref.param(ps.get("backbone.norm.g")),
                               ref.param(ps.get("backbone.norm.b")));
    Var mean_patch = ref.mean_rows(normed, 4, 8);
    for (int i = 0; i < 16; ++i) {
        CHECK(tape.val(f)[16 + i] == doctest::Approx(ref.val(mean_patch)[i]).epsilon(1e-12));
    }
}

TEST_CASE("forward: deterministic across repeated passes") {
    std::mt19937 rng(15);
    BackboneConfig cfg = tiny_cfg(16, 3, 3);
    cfg.depth = 2;
    nn::ParamSet ps;
    init_backbone(ps, cfg, rng);
    nn::Tensor img = normalized_random(48, 48, 16);
    Tape t1, t2;
    Var a = backbone_forward(t1, ps, cfg, img);
    Var b = backbone_forward(t2, ps, cfg, img);
    CHECK(testutil::max_abs_diff(t1.val(a), t2.val(b)) == 0.0);
}

TEST_CASE("interpolate_pos_embed: identity is bit-exact") {
    PositionalGrid g;
    g.rows = 14;
    g.cols = 14;
    g.embeddings = testutil::random_tensor({196, 8}, 17);
    g.extra_tokens = testutil::random_tensor({1, 8}, 18);
    PositionalGrid out = interpolate_pos_embed(g, 14, 14);
    CHECK(out.embeddings.raw() == g.embeddings.raw());
    CHECK(out.extra_tokens.raw() == g.extra_tokens.raw());
}

TEST_CASE("interpolate_pos_embed: 2x2 to 3x3 center is the corner mean") {
    PositionalGrid g;
    g.rows = 2;
    g.cols = 2;
    g.embeddings = testutil::random_tensor({4, 5}, 19);
    g.extra_tokens = Tensor({1, 5});
    PositionalGrid out = interpolate_pos_embed(g, 3, 3);
    for (int ch = 0; ch < 5; ++ch) {
        const double mean = (g.embeddings.at(0, ch) + g.embeddings.at(1, ch) +
                             g.embeddings.at(2, ch) + g.embeddings.at(3, ch)) /
                            4.0;
        CHECK(out.embeddings.at(4, ch) == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("interpolate_pos_embed: corners preserved for any target size") {
    PositionalGrid g;
    g.rows = 7;
    g.cols = 9;
    g.embeddings = testutil::random_tensor({63, 6}, 20);
    g.extra_tokens = Tensor({1, 6});
    for (auto [nr, nc] : {std::pair{3, 4}, {14, 18}, {7, 9}, {29, 5}}) {
        PositionalGrid out = interpolate_pos_embed(g, nr, nc);
        for (int ch = 0; ch < 6; ++ch) {
            CHECK(out.embeddings.at(0, ch) == g.embeddings.at(0, ch));
            CHECK(out.embeddings.at(nc - 1, ch) == g.embeddings.at(g.cols - 1, ch));
            CHECK(out.embeddings.at((nr - 1) * nc, ch) ==
                  g.embeddings.at((g.rows - 1) * g.cols, ch));
            CHECK(out.embeddings.at(nr * nc - 1, ch) ==
                  g.embeddings.at(g.rows * g.cols - 1, ch));
        }
    }
}

TEST_CASE("interpolate_pos_embed: 14x14 to 28x56 matches the oracle") {
    PositionalGrid g;
    g.rows = 14;
    g.cols = 14;
    g.embeddings = testutil::random_tensor({196, 12}, 21);
    g.extra_tokens = testutil::random_tensor({1, 12}, 22);
    PositionalGrid out = interpolate_pos_embed(g, 28, 56);
    std::vector<double> ref =
        oracle::interp_grid_corner_aligned(g.embeddings.raw(), 14, 14, 12, 28, 56);
    double max_err = 0.0;
    for (size_t i = 0; i < ref.size(); ++i) {
        max_err = std::max(max_err, std::abs(out.embeddings[i] - ref[i]));
    }
    CHECK(max_err < 1e-6);
    CHECK(out.extra_tokens.raw() == g.extra_tokens.raw());
}

TEST_CASE("freeze_mask: full and attention_and_pos modes") {
    BackboneConfig cfg = backbone_preset("desk");
    auto full = freeze_mask(cfg, FreezeMode::full);
    for (const auto& [name, trainable] : full) CHECK(trainable);

    auto partial = freeze_mask(cfg, FreezeMode::attention_and_pos);
    CHECK(partial.at("backbone.pos"));
    CHECK(partial.at("backbone.blocks.0.attn.wq.w"));
    CHECK(partial.at("backbone.blocks.1.attn.wo.b"));
    CHECK_FALSE(partial.at("backbone.blocks.0.mlp.fc1.w"));
    CHECK_FALSE(partial.at("backbone.blocks.1.mlp.fc2.b"));
    CHECK_FALSE(partial.at("backbone.patch_embed.w"));
    CHECK_FALSE(partial.at("backbone.cls"));
    CHECK_FALSE(partial.at("backbone.norm.g"));
    CHECK_FALSE(partial.at("backbone.blocks.0.ln1.g"));

    // The mask covers every backbone parameter exactly once.
    std::mt19937 rng(23);
    nn::ParamSet ps;
    init_backbone(ps, cfg, rng);
    CHECK(partial.size() == ps.count());
    for (const nn::Parameter* p : ps.all()) CHECK(partial.count(p->name) == 1);
}

TEST_CASE("adapt_pos_grid: reshapes the stored embeddings and config") {
    std::mt19937 rng(24);
    BackboneConfig cfg = tiny_cfg(16, 14, 14);
    nn::ParamSet ps;
    init_backbone(ps, cfg, rng);
    const Tensor before = ps.get("backbone.pos").value;
    adapt_pos_grid(ps, cfg, 28, 56);
    CHECK(cfg.pos_rows == 28);
    CHECK(cfg.pos_cols == 56);
    CHECK(ps.get("backbone.pos").value.rows() == 28 * 56);
    // Corner embedding survives the interpolation exactly.
    for (int ch = 0; ch < cfg.embed_dim; ++ch) {
        CHECK(ps.get("backbone.pos").value.at(0, ch) == before.at(0, ch));
    }
}

TEST_CASE("backbone presets match the published architecture table") {
    CHECK(backbone_preset("transpath").embed_dim == 384);
    CHECK(backbone_preset("transpath").patch_size == 16);
    CHECK(backbone_preset("transpath").output_mode == OutputMode::class_token);
    CHECK(backbone_preset("transpath").feature_dim() == 384);
    CHECK(backbone_preset("uni").embed_dim == 1024);
    CHECK(backbone_preset("uni").feature_dim() == 2048);
    CHECK(backbone_preset("virchow2").embed_dim == 1280);
    CHECK(backbone_preset("virchow2").patch_size == 14);
    CHECK(backbone_preset("virchow2").feature_dim() == 2560);
    CHECK(backbone_preset("h-optimus-0").embed_dim == 1536);
    CHECK(backbone_preset("h-optimus-0").n_register_tokens == 4);
    CHECK(backbone_preset("h-optimus-0").feature_dim() == 3072);
    CHECK_THROWS_AS(backbone_preset("nope"), InvalidInput);
}
