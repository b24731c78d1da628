#pragma once

// Minimal reverse-mode automatic differentiation over dense float32 tensors.
//
// Volume tensors are channels-last, [N, T, H, W, C], so that every voxel's
// channel vector is contiguous and convolutions reduce to GEMMs.

#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace cftgan::ag {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);

struct Node {
    Shape shape;
    std::vector<float> value;
    std::vector<float> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backward;

    std::vector<float>& ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0f);
        return grad;
    }
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Var constant(Shape shape, std::vector<float> value);
    static Var constant(Shape shape, float fill);
    static Var parameter(Shape shape, std::vector<float> value);

    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<std::size_t>(i < 0 ? rank() + i : i)]; }
    std::size_t numel() const { return node_->value.size(); }

    std::span<const float> value() const { return node_->value; }
    std::span<float> mutable_value() { return node_->value; }
    /// Empty span if no gradient has been accumulated.
    std::span<const float> grad() const { return node_->grad; }
    std::span<float> mutable_grad() { return node_->ensure_grad(); }
    bool requires_grad() const { return node_->requires_grad; }
    float item() const { return node_->value.at(0); }

    void zero_grad() { node_->grad.clear(); }
    /// Fresh leaf with a copy of the value and the same requires_grad flag.
    Var deep_copy() const;
    /// Constant leaf with a copy of the value; blocks gradient flow.
    Var detach() const;

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& shared() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

private:
    std::shared_ptr<Node> node_;
};

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad.
void backward(const Var& loss);

// Elementwise arithmetic (shapes must match exactly).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, float s);
Var add_scalar(const Var& a, float s);
/// 1 - a
Var one_minus(const Var& a);

Var relu(const Var& x);
Var leaky_relu(const Var& x, float slope);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var exp(const Var& x);
/// log(max(x, eps)); the gradient is zero where the clamp is active.
Var clamped_log(const Var& x, float eps);
Var abs(const Var& x);

/// Scalar reductions; result has shape {1}.
Var sum(const Var& x);
Var mean(const Var& x);

Var reshape(const Var& x, Shape shape);
/// Concatenate along the last axis. All leading dims must agree.
Var concat_last(const std::vector<Var>& parts);
/// [..., 1] -> [..., c]
Var expand_last(const Var& x, int c);
/// [N, 1, H, W, C] -> [N, t, H, W, C]
Var repeat_frames(const Var& x, int t);
/// [N, C] -> [N, t, h, w, C]
Var tile_volume(const Var& x, int t, int h, int w);

/// x [N, in] * w [in, out] + b [out]
/// x [N, in] * w [in, out] + b [out]; an empty b means no bias.
Var linear(const Var& x, const Var& w, const Var& b);

struct AxisGeom {
    int upsample = 1;  // nearest-neighbour factor applied before the convolution
    int kernel = 1;
    int stride = 1;
    int pad = 0;

    int output_size(int input) const { return (input * upsample + 2 * pad - kernel) / stride + 1; }
};

/// Per-axis geometry for (T, H, W).
struct ConvGeom {
    std::array<AxisGeom, 3> axes;

    int taps() const { return axes[0].kernel * axes[1].kernel * axes[2].kernel; }
};

/// x [N, T, H, W, Cin], w [taps * Cin, Cout], optional bias [Cout].
/// Nearest-neighbour up-sampling is fused into the index mapping.
Var conv3d(const Var& x, const Var& w, const Var* bias, const ConvGeom& geom);

struct BatchNormState {
    std::vector<float> running_mean;
    std::vector<float> running_var;
};

/// Normalizes over every axis except the last. In training mode batch
/// statistics are used and `state` is updated with `momentum`.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, bool training,
               float momentum = 0.1f, float eps = 1e-5f);

}  // namespace cftgan::ag
