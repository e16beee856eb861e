#pragma once

#include <map>
#include <random>
#include <string>

#include "thumbqc/nn/params.hpp"
#include "thumbqc/nn/tape.hpp"

namespace thumbqc {

enum class OutputMode { class_token, class_plus_mean_patch };

/// Vision-transformer architecture description. pos_rows/pos_cols are the
/// token grid the stored position embeddings cover; they start at
/// 224/patch_size and change when the grid is re-interpolated for larger
/// inputs.
struct BackboneConfig {
    int patch_size = 16;
    int depth = 2;
    int heads = 4;
    int embed_dim = 64;
    double mlp_ratio = 4.0;
    int n_register_tokens = 0;
    OutputMode output_mode = OutputMode::class_token;
    int pos_rows = 14;
    int pos_cols = 14;

    int feature_dim() const {
        return output_mode == OutputMode::class_plus_mean_patch ? 2 * embed_dim : embed_dim;
    }
    int mlp_hidden() const { return static_cast<int>(embed_dim * mlp_ratio); }
    int head_dim() const { return embed_dim / heads; }
    int patch_dim() const { return patch_size * patch_size * 3; }
    int extra_tokens() const { return 1 + n_register_tokens; }
    void validate() const;
};

/// Named architecture presets. "desk" is a tiny seconds-scale config; the
/// published-backbone names carry the real patch sizes, embedding widths
/// and output modes (weights are loadable data, not shipped).
BackboneConfig backbone_preset(const std::string& name);
std::string output_mode_name(OutputMode m);
OutputMode output_mode_from_name(const std::string& s);

/// 2D grid of position embeddings plus the class/register embeddings that
/// are carried through interpolation untouched.
struct PositionalGrid {
    int rows = 0;
    int cols = 0;
    nn::Tensor embeddings;    // [rows*cols, D]
    nn::Tensor extra_tokens;  // [1 + n_registers, D]
};

/// Corner-aligned bilinear interpolation of the positional grid, channel by
/// channel. The four corner embeddings are preserved exactly; extra tokens
/// pass through untouched.
PositionalGrid interpolate_pos_embed(const PositionalGrid& grid, int new_rows, int new_cols);

/// Adds all backbone parameters (prefix "backbone.") and initializes them.
void init_backbone(nn::ParamSet& params, const BackboneConfig& cfg, std::mt19937& rng);

/// Schema names of every backbone parameter implied by the config.
std::vector<std::string> backbone_param_names(const BackboneConfig& cfg);

/// Embeds a normalized [H,W,3] image: patch tokens via the learned linear
/// projection with position embeddings added, class (and register) tokens
/// prepended. Returns the [extra + patches, D] token sequence.
nn::Var patch_embed(nn::Tape& tape, nn::ParamSet& params, const BackboneConfig& cfg,
                    const nn::Tensor& img);

/// Pre-norm transformer encoder over an embedded token sequence, final
/// LayerNorm included. Returns the [1, feature_dim] slide/tile feature:
/// class token, or class token concatenated with the mean patch token
/// (register tokens excluded from the mean).
nn::Var encode(nn::Tape& tape, nn::ParamSet& params, const BackboneConfig& cfg, nn::Var tokens);

/// patch_embed + encode on one normalized image.
nn::Var backbone_forward(nn::Tape& tape, nn::ParamSet& params, const BackboneConfig& cfg,
                         const nn::Tensor& img);

/// Pre-norm transformer block stack (MHSA + GELU MLP, residual) reused by
/// the backbone and the tile aggregator. `prefix` namespaces the parameters
/// ("backbone.blocks.", "agg.tf.blocks.", ...).
struct EncoderDims {
    int depth = 0;
    int heads = 1;
    int dim = 0;
    double mlp_ratio = 4.0;
};
void init_encoder_blocks(nn::ParamSet& params, const std::string& prefix, const EncoderDims& dims,
                         std::mt19937& rng);
nn::Var encoder_blocks(nn::Tape& tape, nn::ParamSet& params, const std::string& prefix,
                       const EncoderDims& dims, nn::Var x);

enum class FreezeMode { full, attention_and_pos };
FreezeMode freeze_mode_from_name(const std::string& s);
std::string freeze_mode_name(FreezeMode m);

/// Per-parameter trainable flags covering every backbone parameter exactly
/// once. attention_and_pos leaves only the attention projections and the
/// position embeddings trainable.
std::map<std::string, bool> freeze_mask(const BackboneConfig& cfg, FreezeMode mode);

/// Marks parameters trainable per mask (names outside the set are ignored).
void apply_freeze_mask(nn::ParamSet& params, const std::map<std::string, bool>& mask);

/// Extracts the stored positional grid; pairs with set_pos_grid.
PositionalGrid pos_grid_of(const nn::ParamSet& params, const BackboneConfig& cfg);

/// Replaces the stored position embeddings with the grid interpolated to
/// (new_rows, new_cols) and updates cfg. Done once when adapting a backbone
/// to a larger input, after which the interpolated grid is the trainable
/// parameter.
void adapt_pos_grid(nn::ParamSet& params, BackboneConfig& cfg, int new_rows, int new_cols);

}  // namespace thumbqc
