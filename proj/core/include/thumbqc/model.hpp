#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "thumbqc/backbone.hpp"
#include "thumbqc/heads.hpp"
#include "thumbqc/image.hpp"

namespace thumbqc {

enum class Approach {
    xs_slides,
    vit_upscaling,
    tiled_soft_vote,
    tiled_attention,
    tiled_transformer,
};

Approach approach_from_name(const std::string& s);
std::string approach_name(Approach a);
bool approach_is_tiled(Approach a);

/// Whole-slide approaches run at XS (or M for the upscaled variant); tiled
/// approaches run at M or L.
bool approach_scale_compatible(Approach a, const std::string& scale_name);

struct ModelConfig {
    Approach approach = Approach::tiled_soft_vote;
    std::string scale = "L";
    std::string backbone_name = "desk";
    BackboneConfig backbone = backbone_preset("desk");
    HeadConfig head = head_preset("desk");
    AttentionPoolConfig att{};
    TileTransformerConfig agg{};
    std::array<double, 3> norm_mean{0.5, 0.5, 0.5};
    std::array<double, 3> norm_std{0.5, 0.5, 0.5};
    uint64_t seed = 0;

    void validate() const;
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

/// A fixation-type classifier: preprocessing geometry, backbone, aggregation
/// and head behind one forward surface. Weights are immutable in eval mode,
/// so concurrent inference over one instance is safe; training mutates and
/// needs exclusive ownership.
class SlideModel {
public:
    SlideModel() = default;

    /// Initializes all parameters from the seed. For vit_upscaling the
    /// position grid is initialized at 224/patch and then re-interpolated
    /// once to the M-scale token grid.
    static SlideModel create(ModelConfig cfg, uint64_t seed);

    /// Builds the parameter schema exactly as the config describes, with no
    /// grid adaptation. Used when loading serialized bundles whose configs
    /// already carry the final grid.
    static SlideModel from_config(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }
    nn::ParamSet& params() { return params_; }
    const nn::ParamSet& params() const { return params_; }

    /// orient -> stretch to canonical -> resize to the model's scale.
    RasterImage preprocess(const RasterImage& thumbnail) const;

    /// Probabilities [batch, 1] for a batch of preprocessed (scale-sized)
    /// images. The whole batch shares one tape so BatchNorm sees true batch
    /// statistics when training.
    nn::Var batch_probabilities(nn::Tape& tape, const std::vector<const RasterImage*>& inputs,
                                const RunMode& mode);

    /// Full pipeline on one decoded thumbnail, eval mode.
    double infer_probability(const RasterImage& thumbnail) const;

    void apply_freeze(FreezeMode mode);

private:
    ModelConfig cfg_;
    nn::ParamSet params_;

    nn::Var tile_features(nn::Tape& tape, const RasterImage& scaled);  // [tiles, feature_dim]
};

}  // namespace thumbqc
