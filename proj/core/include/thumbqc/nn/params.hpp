#pragma once

#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "thumbqc/nn/tensor.hpp"

namespace thumbqc::nn {

/// One named parameter tensor with its accumulated gradient.
/// `buffer` marks non-learnable state (BatchNorm running stats): serialized,
/// never touched by the optimizer, outside the freeze-mask domain.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;
    bool buffer = false;
    bool weight_decay = false;  // decoupled decay applies to matrices only

    void zero_grad() { grad.fill(0.0); }
};

/// Named parameter collection; the on-disk weight container mirrors it.
class ParamSet {
public:
    ParamSet() = default;
    ParamSet(const ParamSet& o);
    ParamSet& operator=(const ParamSet& o);
    ParamSet(ParamSet&&) = default;
    ParamSet& operator=(ParamSet&&) = default;

    Parameter& add(const std::string& name, std::vector<int> shape);
    Parameter& add_buffer(const std::string& name, std::vector<int> shape);

    bool has(const std::string& name) const;
    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;

    std::vector<Parameter*> all();
    std::vector<const Parameter*> all() const;
    size_t count() const { return items_.size(); }

    void zero_grads();

private:
    std::vector<std::unique_ptr<Parameter>> items_;  // stable addresses, insertion order
    std::map<std::string, size_t> index_;
};

/// Gaussian init clipped to +-2 std, the usual ViT token/weight init.
void init_trunc_normal(Tensor& t, real stddev, std::mt19937& rng);

}  // namespace thumbqc::nn
