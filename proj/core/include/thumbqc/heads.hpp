#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include "thumbqc/nn/params.hpp"
#include "thumbqc/nn/tape.hpp"

namespace thumbqc {

/// Three-hidden-layer classification head: each hidden layer is
/// Dropout(ReLU(BatchNorm(Wx + b))), followed by a linear map to one logit.
struct HeadConfig {
    std::array<int, 3> layer_sizes{128, 64, 32};
    double dropout_p = 0.1;
    int input_dim = 64;
    void validate() const;
};

/// Tuned layer sizes per named backbone; input_dim follows the backbone's
/// output mode.
HeadConfig head_preset(const std::string& backbone_name);

void init_head(nn::ParamSet& params, const HeadConfig& cfg, std::mt19937& rng);

/// Mode switch threaded through every stochastic/stateful op.
struct RunMode {
    bool training = false;
    std::mt19937* dropout_rng = nullptr;
};

/// Hidden layers + final linear over a [m, input_dim] feature batch.
/// Returns [m, 1] logits. BatchNorm uses batch statistics when training and
/// running statistics at inference; dropout is a pass-through at inference.
nn::Var head_logits(nn::Tape& tape, nn::ParamSet& params, const HeadConfig& cfg,
                    nn::Var features, const RunMode& mode);

/// One hidden layer on its own (exposed for tests and the formula contract).
nn::Var hidden_layer(nn::Tape& tape, nn::ParamSet& params, const std::string& prefix,
                     double dropout_p, nn::Var x, const RunMode& mode);

/// Slide probability = mean of per-tile sigmoids over [n, 1] logits -> [1, 1].
nn::Var soft_vote(nn::Tape& tape, nn::Var tile_logits);

/// Learned-query multi-head attention pooling over tile features.
struct AttentionPoolConfig {
    int heads = 4;
    int dim = 64;  // tile feature dim; heads must divide it
    void validate() const;
};

void init_attention_pool(nn::ParamSet& params, const AttentionPoolConfig& cfg, std::mt19937& rng);

struct AttentionPoolOut {
    nn::Var pooled;                     // [1, dim]
    std::vector<nn::Var> head_weights;  // per head [1, n], softmax-normalized
};

/// Per head: alpha = softmax(q k_i / sqrt(d_h)) over tiles, output
/// sum(alpha_i v_i); heads concatenated and projected back to dim.
AttentionPoolOut attention_pool(nn::Tape& tape, nn::ParamSet& params,
                                const AttentionPoolConfig& cfg, nn::Var features);

/// Transformer over tile features as tokens with learned per-slot position
/// embeddings and a class token.
struct TileTransformerConfig {
    int depth = 1;
    int heads = 2;
    int dim = 64;
    int slots = 32;  // >= max tiles in use
    void validate() const;
};

void init_tile_transformer(nn::ParamSet& params, const TileTransformerConfig& cfg,
                           std::mt19937& rng);

/// Adds slot position embeddings to the n tile features (n <= slots),
/// prepends the class token, runs the encoder blocks and returns the final
/// class token [1, dim].
nn::Var transformer_aggregate(nn::Tape& tape, nn::ParamSet& params,
                              const TileTransformerConfig& cfg, nn::Var features);

}  // namespace thumbqc
