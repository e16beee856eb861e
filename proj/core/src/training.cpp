#include "thumbqc/training.hpp"

#include <algorithm>
#include <cmath>

#include "thumbqc/errors.hpp"
#include "thumbqc/image_io.hpp"

namespace thumbqc {

double bce_loss(double probability, int label) {
    const double p = std::clamp(probability, 1e-7, 1.0 - 1e-7);
    return label == 1 ? -std::log(p) : -std::log(1.0 - p);
}

void TrainConfig::validate() const {
    if (epochs < 1) throw InvalidInput("train config: epochs must be >= 1");
    if (batch_size < 1) throw InvalidInput("train config: batch_size must be >= 1");
    if (lr <= 0.0) throw InvalidInput("train config: lr must be > 0");
    if (weight_decay < 0.0) throw InvalidInput("train config: negative weight decay");
    if (early_stop_patience < 0) throw InvalidInput("train config: negative patience");
}

AdamW::AdamW(double lr, double weight_decay, double beta1, double beta2, double eps)
    : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamW::step(nn::ParamSet& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (nn::Parameter* p : params.all()) {
        if (p->buffer || !p->trainable) continue;
        auto it = state_.find(p->name);
        if (it == state_.end()) {
            it = state_
                     .emplace(p->name, std::make_pair(nn::Tensor(p->value.shape()),
                                                      nn::Tensor(p->value.shape())))
                     .first;
        }
        nn::Tensor& m = it->second.first;
        nn::Tensor& v = it->second.second;
        for (size_t i = 0; i < p->value.size(); ++i) {
            const double g = p->grad[i];
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            double upd = mhat / (std::sqrt(vhat) + eps_);
            if (p->weight_decay) upd += wd_ * p->value[i];
            p->value[i] -= lr_ * upd;
        }
    }
}

namespace {

struct LoadedSlide {
    RasterImage scaled;  // preprocessed to the model's scale
    int label = 0;
};

// Builds the batch forward + loss on the caller's tape; counts threshold-0.5
// hits into *correct and returns the loss node.
nn::Var batch_pass(SlideModel& model, const std::vector<LoadedSlide>& slides,
                   const std::vector<size_t>& idx, size_t begin, size_t end, const RunMode& mode,
                   nn::Tape& tape, long* correct) {
    std::vector<const RasterImage*> inputs;
    std::vector<nn::real> labels;
    inputs.reserve(end - begin);
    for (size_t k = begin; k < end; ++k) {
        inputs.push_back(&slides[idx[k]].scaled);
        labels.push_back(static_cast<nn::real>(slides[idx[k]].label));
    }
    nn::Var probs = model.batch_probabilities(tape, inputs, mode);
    const nn::Tensor& pv = tape.val(probs);
    for (size_t k = 0; k < labels.size(); ++k) {
        const int pred = pv[k] >= 0.5 ? 1 : 0;
        if (pred == static_cast<int>(labels[k])) ++(*correct);
    }
    return tape.bce_mean(probs, labels);
}

}  // namespace

TrainResult train(const Manifest& manifest, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const SlideLoader& loader_in,
                  const std::function<void(const EpochStats&)>& on_epoch) {
    cfg.validate();
    auto train_recs = manifest.split("train");
    auto val_recs = manifest.split("val");
    if (train_recs.empty() || val_recs.empty()) {
        throw InvalidInput("train: manifest needs non-empty train and val splits");
    }
    for (const auto* r : train_recs) {
        if (r->label != 0 && r->label != 1) throw InvalidInput("train: unlabeled slide " + r->slide_id);
    }
    for (const auto* r : val_recs) {
        if (r->label != 0 && r->label != 1) throw InvalidInput("train: unlabeled slide " + r->slide_id);
    }

    SlideLoader loader = loader_in;
    if (!loader) loader = [](const ManifestRecord& r) { return load_image(r.path); };

    SlideModel model = SlideModel::create(model_cfg, cfg.seed);
    const FreezeMode freeze = cfg.freeze.value_or(model_cfg.approach == Approach::vit_upscaling
                                                      ? FreezeMode::attention_and_pos
                                                      : FreezeMode::full);
    model.apply_freeze(freeze);

    auto load_split = [&](const std::vector<const ManifestRecord*>& recs) {
        std::vector<LoadedSlide> out;
        out.reserve(recs.size());
        for (const auto* r : recs) {
            out.push_back({model.preprocess(loader(*r)), r->label});
        }
        return out;
    };
    const std::vector<LoadedSlide> train_slides = load_split(train_recs);
    const std::vector<LoadedSlide> val_slides = load_split(val_recs);

    AdamW opt(cfg.lr, cfg.weight_decay);
    std::mt19937 shuffle_rng(static_cast<uint32_t>(cfg.seed * 2654435761u + 1));
    std::mt19937 dropout_rng(static_cast<uint32_t>(cfg.seed * 2246822519u + 2));

    std::vector<size_t> order(train_slides.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<size_t> val_order(val_slides.size());
    for (size_t i = 0; i < val_order.size(); ++i) val_order[i] = i;

    TrainResult result;
    nn::ParamSet best_params;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng() % i]);

        double train_loss = 0.0;
        long train_correct = 0;
        const RunMode train_mode{true, &dropout_rng};
        for (size_t b = 0; b < order.size(); b += cfg.batch_size) {
            const size_t e = std::min(order.size(), b + cfg.batch_size);
            model.params().zero_grads();
            nn::Tape tape;
            nn::Var loss = batch_pass(model, train_slides, order, b, e, train_mode, tape,
                                      &train_correct);
            train_loss += tape.val(loss)[0] * static_cast<double>(e - b);
            tape.backward(loss);
            opt.step(model.params());
        }
        train_loss /= static_cast<double>(train_slides.size());

        double val_loss = 0.0;
        long val_correct = 0;
        const RunMode eval_mode{};
        for (size_t b = 0; b < val_slides.size(); b += cfg.batch_size) {
            const size_t e = std::min(val_slides.size(), b + cfg.batch_size);
            nn::Tape tape;
            nn::Var loss = batch_pass(model, val_slides, val_order, b, e, eval_mode, tape,
                                      &val_correct);
            val_loss += tape.val(loss)[0] * static_cast<double>(e - b);
        }
        val_loss /= static_cast<double>(val_slides.size());

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = train_loss;
        stats.train_acc = static_cast<double>(train_correct) / train_slides.size();
        stats.val_loss = val_loss;
        stats.val_acc = static_cast<double>(val_correct) / val_slides.size();
        result.log.push_back(stats);
        if (on_epoch) on_epoch(stats);

        if (result.best_epoch < 0 || stats.val_acc > result.best_val_acc) {
            result.best_epoch = epoch;
            result.best_val_acc = stats.val_acc;
            best_params = model.params();
        }
        if (cfg.early_stop_patience > 0 &&
            epoch - result.best_epoch >= cfg.early_stop_patience) {
            break;
        }
    }
    model.params() = best_params;
    result.model = std::move(model);
    return result;
}

GradCheckReport grad_check(nn::ParamSet& params, const std::function<double(bool)>& loss,
                           double tolerance, double h, int coords_per_param, uint64_t seed) {
    params.zero_grads();
    loss(true);

    // Snapshot the analytic gradients before the finite-difference probes.
    std::map<std::string, nn::Tensor> analytic;
    for (nn::Parameter* p : params.all()) analytic[p->name] = p->grad;

    GradCheckReport report;
    report.tolerance = tolerance;
    std::mt19937 rng(static_cast<uint32_t>(seed * 0x9e3779b9u + 17));
    for (nn::Parameter* p : params.all()) {
        if (p->buffer || !p->trainable) continue;
        GradCheckGroup group;
        group.name = p->name;
        const size_t n = p->value.size();
        const int checks = std::min<size_t>(coords_per_param, n);
        for (int c = 0; c < checks; ++c) {
            const size_t i = n == 1 ? 0 : rng() % n;
            const double orig = p->value[i];
            p->value[i] = orig + h;
            const double up = loss(false);
            p->value[i] = orig - h;
            const double down = loss(false);
            p->value[i] = orig;
            const double fd = (up - down) / (2.0 * h);
            const double an = analytic[p->name][i];
            const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8});
            group.max_rel_err = std::max(group.max_rel_err, rel);
            ++group.checked;
        }
        report.max_rel_err = std::max(report.max_rel_err, group.max_rel_err);
        report.groups.push_back(std::move(group));
    }
    report.passed = report.max_rel_err < tolerance;
    return report;
}

}  // namespace thumbqc
