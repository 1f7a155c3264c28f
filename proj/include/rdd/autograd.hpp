#pragma once

// Minimal tape-based reverse-mode differentiation over float tensors.
//
// A `Var` owns a node in a DAG. Ops record a backward closure only when at
// least one input requires a gradient, so inference under `NoGradGuard` or
// with frozen parameters builds no graph at all.

#include "rdd/tensor.hpp"

#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

namespace rdd::nn {

/// A named-free trainable (or frozen) tensor with its gradient accumulator.
struct Param {
    Tensor value;
    Tensor grad;
    bool trainable = true;

    Param() = default;
    explicit Param(Tensor v, bool trainable_ = true)
        : value(std::move(v)), grad(value.shape()), trainable(trainable_) {}
    void zero_grad() { grad.fill(0.0f); }
};

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
    Param* sink = nullptr;

    /// grad += g, allocating on first use.
    void accumulate(const Tensor& g);
    Tensor& grad_buffer();
};

class Var {
  public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    /// Leaf that never receives a gradient.
    static Var constant(Tensor t);
    /// Leaf whose gradient is kept on the node (readable via grad()).
    static Var input(Tensor t, bool requires_grad = true);
    /// Leaf bound to a parameter; backward accumulates into `p.grad` when trainable.
    static Var leaf(Param& p);

    const Tensor& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    /// Gradient accumulated on this node by the last backward pass (may be empty).
    const Tensor& grad() const { return node_->grad; }
    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& ptr() const { return node_; }

  private:
    std::shared_ptr<Node> node_;
};

/// Disables graph recording on this thread while alive.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

bool grad_enabled();

/// Seeds each (var, gradient) pair and propagates to every reachable leaf.
void backward(std::span<const std::pair<Var, Tensor>> seeds);
void backward(const Var& root, const Tensor& seed);

// --- ops -------------------------------------------------------------------

/// x [N,C,H,W], weight [O,C,k,k], bias [O,1,1,1].
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
/// x [N,F,1,1], weight [O,F,1,1], bias [O,1,1,1] -> [N,O,1,1].
Var linear(const Var& x, const Var& weight, const Var& bias);
Var relu(const Var& x);
Var silu(const Var& x);
Var add(const Var& a, const Var& b);
/// x [N,C,H,W] + e [N,C,1,1] broadcast over space.
Var add_channel_bias(const Var& x, const Var& e);
Var upsample2(const Var& x);
Var concat_channels(const Var& a, const Var& b);
/// Spatial mean -> [N,C,1,1].
Var global_avg_pool(const Var& x);
/// Divides each pixel's channel vector by its l2 norm; all-zero pixels stay zero.
Var l2_normalize_channels(const Var& x);
/// y_n = a_n * x_n + b_n * y_n per batch item.
Var per_item_axpby(std::span<const double> a, const Var& x, std::span<const double> b, const Var& y);
/// Rows of `table` [L,D,1,1] selected by `ids` -> [N,D,1,1].
Var embedding(const Var& table, std::span<const int> ids);

struct BatchNormState {
    Param gamma;
    Param beta;
    Param running_mean; // frozen buffers
    Param running_var;
};

/// Per-channel normalisation over (N, H, W). Training mode uses batch statistics
/// and updates the running buffers; inference mode uses the buffers.
Var batch_norm(const Var& x, BatchNormState& state, bool training, double momentum = 0.1,
               double eps = 1e-5);

} // namespace rdd::nn
