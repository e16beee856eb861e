#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "thumbqc/manifest.hpp"
#include "thumbqc/model.hpp"

namespace thumbqc {

/// Clamped binary cross-entropy on one probability.
double bce_loss(double probability, int label);

struct TrainConfig {
    int epochs = 30;
    int batch_size = 8;
    double lr = 1e-4;
    double weight_decay = 1e-2;
    uint64_t seed = 0;
    /// Unset: derived from the approach (vit_upscaling freezes everything
    /// but attention and position embeddings; all others train fully).
    std::optional<FreezeMode> freeze;
    /// Stop after this many epochs without a val-accuracy improvement
    /// (0 disables).
    int early_stop_patience = 0;

    void validate() const;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
};

struct TrainResult {
    SlideModel model;  // restored to the best-val-accuracy epoch
    std::vector<EpochStats> log;
    int best_epoch = -1;
    double best_val_acc = 0.0;
};

/// Adaptive-moment optimizer with decoupled weight decay. Decay touches
/// only parameters flagged weight_decay (matrices); buffers and frozen
/// parameters are never stepped.
class AdamW {
public:
    AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8);
    void step(nn::ParamSet& params);

private:
    double lr_, wd_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::map<std::string, std::pair<nn::Tensor, nn::Tensor>> state_;  // m, v
};

/// Maps a manifest record to its decoded thumbnail. The default loads
/// record.path from disk; tests and callers with caches supply their own.
using SlideLoader = std::function<RasterImage(const ManifestRecord&)>;

/// Supervised training over the manifest's train/val splits. Deterministic
/// given the seed: fixed init, fixed shuffles, fixed dropout streams.
/// Returns the weights of the best validation-accuracy epoch.
TrainResult train(const Manifest& manifest, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const SlideLoader& loader = {},
                  const std::function<void(const EpochStats&)>& on_epoch = {});

/// Gradient verification via central differences.
struct GradCheckGroup {
    std::string name;
    double max_rel_err = 0.0;
    int checked = 0;
};

struct GradCheckReport {
    std::vector<GradCheckGroup> groups;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

/// `loss(with_grad)` must evaluate the same deterministic loss every call;
/// when with_grad it must also run backward so gradients accumulate into
/// `params` (grad buffers are zeroed here first). Checks up to
/// coords_per_param seeded coordinates per parameter at step h.
GradCheckReport grad_check(nn::ParamSet& params, const std::function<double(bool)>& loss,
                           double tolerance, double h = 1e-4, int coords_per_param = 8,
                           uint64_t seed = 0);

}  // namespace thumbqc
