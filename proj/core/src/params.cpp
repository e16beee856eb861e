#include "thumbqc/nn/params.hpp"

#include "thumbqc/errors.hpp"

namespace thumbqc::nn {

ParamSet::ParamSet(const ParamSet& o) {
    items_.reserve(o.items_.size());
    for (const auto& p : o.items_) items_.push_back(std::make_unique<Parameter>(*p));
    index_ = o.index_;
}

ParamSet& ParamSet::operator=(const ParamSet& o) {
    if (this == &o) return *this;
    items_.clear();
    items_.reserve(o.items_.size());
    for (const auto& p : o.items_) items_.push_back(std::make_unique<Parameter>(*p));
    index_ = o.index_;
    return *this;
}

Parameter& ParamSet::add(const std::string& name, std::vector<int> shape) {
    if (index_.count(name)) throw InvalidInput("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->value = Tensor(shape);
    p->grad = Tensor(std::move(shape));
    index_[name] = items_.size();
    items_.push_back(std::move(p));
    return *items_.back();
}

Parameter& ParamSet::add_buffer(const std::string& name, std::vector<int> shape) {
    Parameter& p = add(name, std::move(shape));
    p.buffer = true;
    p.trainable = false;
    return p;
}

bool ParamSet::has(const std::string& name) const { return index_.count(name) != 0; }

Parameter& ParamSet::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw SchemaError("missing parameter: " + name);
    return *items_[it->second];
}

const Parameter& ParamSet::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw SchemaError("missing parameter: " + name);
    return *items_[it->second];
}

std::vector<Parameter*> ParamSet::all() {
    std::vector<Parameter*> out;
    out.reserve(items_.size());
    for (auto& p : items_) out.push_back(p.get());
    return out;
}

std::vector<const Parameter*> ParamSet::all() const {
    std::vector<const Parameter*> out;
    out.reserve(items_.size());
    for (const auto& p : items_) out.push_back(p.get());
    return out;
}

void ParamSet::zero_grads() {
    for (auto& p : items_) p->zero_grad();
}

void init_trunc_normal(Tensor& t, real stddev, std::mt19937& rng) {
    std::normal_distribution<real> dist(0.0, stddev);
    for (size_t i = 0; i < t.size(); ++i) {
        real v = dist(rng);
        int guard = 0;
        while ((v < -2.0 * stddev || v > 2.0 * stddev) && guard++ < 100) v = dist(rng);
        t[i] = v;
    }
}

}  // namespace thumbqc::nn
