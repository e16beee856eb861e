#pragma once

#include <deque>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "thumbqc/nn/params.hpp"
#include "thumbqc/nn/tensor.hpp"

namespace thumbqc::nn {

/// Handle to a node on a Tape.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Reverse-mode autodiff over rank-2 tensors. One tape per forward/backward
/// pass; ops append nodes in topological order and backward() sweeps the
/// closures in reverse. Gradients of leaves bound with param() are flushed
/// into Parameter::grad (accumulating across tapes until zero_grads()).
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Inference tapes bind parameters without gradient tracking: no
    /// backward closures are built and attention reuses one scratch buffer
    /// for its softmax weights instead of keeping every head's weights
    /// alive. Arithmetic is identical either way. Must be set before any
    /// node is created; backward() is unavailable on such a tape.
    void set_inference(bool on) { inference_ = on; }

    // Leaves.
    Var constant(Tensor t);
    Var param(Parameter& p);

    // Linear algebra.
    Var matmul(Var a, Var b);     // [m,k] x [k,n] -> [m,n]
    Var matmul_nt(Var a, Var b);  // [m,k] x [n,k] -> [m,n], b used transposed
    Var add(Var a, Var b);        // same shape
    Var add_rowvec(Var a, Var bias);  // bias [1,n] broadcast over rows
    Var scale(Var a, real s);

    // Activations.
    Var relu(Var a);
    Var gelu(Var a);
    Var sigmoid(Var a);
    Var softmax_rows(Var a);

    // Normalization. BatchNorm reads/updates the running-stat buffers in
    // place when training; eval mode normalizes with them and leaves them
    // untouched.
    Var layernorm(Var x, Var gamma, Var beta, real eps = 1e-5);
    Var batchnorm(Var x, Var gamma, Var beta, Parameter& running_mean, Parameter& running_var,
                  bool training, real momentum = 0.1, real eps = 1e-5);

    // Fused scaled-dot-product attention for one head:
    // out = softmax(q k^T * scale) v. Keeps only the post-softmax weights.
    Var attention(Var q, Var k, Var v, real scale);

    // Inverted dropout; pass-through when disabled or p == 0.
    Var dropout(Var a, real p, std::mt19937& rng, bool enabled);

    // Shape surgery (all copying; backward scatters).
    Var slice_rows(Var a, int r0, int r1);
    Var slice_cols(Var a, int c0, int c1);
    Var concat_rows(std::span<const Var> parts);
    Var concat_cols(std::span<const Var> parts);
    Var mean_rows(Var a, int r0, int r1);  // -> [1, n], mean over the row range

    // Scalar [1,1] mean binary cross-entropy over probabilities [m,1];
    // probabilities are clamped to [1e-7, 1 - 1e-7].
    Var bce_mean(Var probs, const std::vector<real>& labels);

    const Tensor& val(Var v) const;
    /// Gradient of a node after backward(); zeros if the node was off-path.
    const Tensor& grad(Var v) const;

    void backward(Var loss);
    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor val;
        Tensor grad;  // allocated during backward()
        std::function<void()> back;
        Parameter* bound = nullptr;
        bool needs_grad = false;
    };

    Var push(Tensor val, bool needs_grad);
    Node& node(Var v) { return nodes_[static_cast<size_t>(v.id)]; }
    const Node& node(Var v) const { return nodes_[static_cast<size_t>(v.id)]; }
    bool tracked(Var v) const { return node(v).needs_grad; }
    // Gradient buffer of a node, or nullptr when the node is untracked.
    real* gptr(int id);

    // deque: references returned by val() stay valid while the tape grows.
    std::deque<Node> nodes_;
    bool in_backward_ = false;
    bool inference_ = false;
};

}  // namespace thumbqc::nn
