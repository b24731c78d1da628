#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "cftgan/autograd.hpp"
#include "cftgan/rng.hpp"

namespace cftgan::nn {

using ag::Var;

/// Enumerates the trainable tensors and persistent buffers of a network in a
/// stable order. Checkpointing, optimizers and cloning are built on this.
class ParamVisitor {
public:
    virtual ~ParamVisitor() = default;
    virtual void param(const std::string& name, Var& value) = 0;
    virtual void buffer(const std::string& name, std::vector<float>& value) = 0;
};

struct NamedParam {
    std::string name;
    Var* var;
};

template <class Net>
std::vector<NamedParam> parameters(Net& net) {
    struct Collect : ParamVisitor {
        std::vector<NamedParam> out;
        void param(const std::string& name, Var& v) override { out.push_back({name, &v}); }
        void buffer(const std::string&, std::vector<float>&) override {}
    } c;
    net.visit(c, "");
    return std::move(c.out);
}

/// Replaces every parameter with a deep copy so two networks stop sharing storage.
template <class Net>
void detach_storage(Net& net) {
    for (auto& p : parameters(net)) *p.var = p.var->deep_copy();
}

template <class Net>
void zero_grad(Net& net) {
    for (auto& p : parameters(net)) p.var->zero_grad();
}

template <class Net>
std::size_t parameter_count(Net& net) {
    std::size_t n = 0;
    for (auto& p : parameters(net)) n += p.var->numel();
    return n;
}

struct Linear {
    Var weight;  // [in, out]
    Var bias;    // [out]; empty when a batch norm follows

    Linear() = default;
    Linear(int in, int out, Rng& rng, float init_std = 0.02f, bool with_bias = true);
    Var operator()(const Var& x) const { return ag::linear(x, weight, bias); }
    int in_features() const { return weight.dim(0); }
    int out_features() const { return weight.dim(1); }
    void visit(ParamVisitor& v, const std::string& prefix);
};

struct Conv3d {
    ag::ConvGeom geom;
    Var weight;               // [taps * cin, cout]
    std::optional<Var> bias;  // absent when a batch norm follows

    Conv3d() = default;
    Conv3d(int cin, int cout, const ag::ConvGeom& geom, bool with_bias, Rng& rng, float init_std = 0.02f);
    Var operator()(const Var& x) const { return ag::conv3d(x, weight, bias ? &*bias : nullptr, geom); }
    int out_channels() const { return weight.dim(1); }
    void visit(ParamVisitor& v, const std::string& prefix);
};

struct BatchNorm {
    Var gamma;
    Var beta;
    ag::BatchNormState state;

    BatchNorm() = default;
    BatchNorm(int channels, Rng& rng);
    Var operator()(const Var& x, bool training) { return ag::batch_norm(x, gamma, beta, state, training); }
    void visit(ParamVisitor& v, const std::string& prefix);
};

/// Per-axis flags over (T, H, W): true where the block doubles (or halves) that axis.
using AxisSteps = std::array<bool, 3>;
using Dims3 = std::array<int, 3>;

struct UpsamplingPlan {
    Dims3 seed{};
    std::vector<AxisSteps> steps;
};

/// Plans `blocks` up-sampling blocks ending at `target`. Each axis starts at
/// max(1, target >> blocks) and doubles in the last blocks until it reaches
/// the target, which must be the seed times a power of two.
UpsamplingPlan plan_upsampling(const Dims3& target, int blocks);

/// Mirror of plan_upsampling: each axis halves in the first blocks until it
/// reaches max(1, input >> blocks).
std::vector<AxisSteps> plan_downsampling(const Dims3& input, int blocks);

Dims3 apply_steps(Dims3 dims, const AxisSteps& steps, bool up);

/// Doubling axes: nearest-neighbour x4 then a 4-tap stride-2 convolution.
/// Kept axes: 3-tap stride-1 convolution.
ag::ConvGeom up_geom(const AxisSteps& steps);
/// Halving axes: 4-tap stride-2 convolution. Kept axes: 3-tap stride-1.
ag::ConvGeom down_geom(const AxisSteps& steps);

/// Up-sampling convolution, optionally followed by batch norm + ReLU.
struct UpBlock {
    Conv3d conv;
    std::optional<BatchNorm> bn;

    UpBlock() = default;
    UpBlock(int cin, int cout, const AxisSteps& steps, bool last, Rng& rng);
    Var operator()(const Var& x, bool training);
    void visit(ParamVisitor& v, const std::string& prefix);
};

/// Down-sampling convolution, optional batch norm, then LeakyReLU(0.2).
struct DownBlock {
    Conv3d conv;
    std::optional<BatchNorm> bn;

    DownBlock() = default;
    DownBlock(int cin, int cout, const AxisSteps& steps, bool with_bn, Rng& rng);
    Var operator()(const Var& x, bool training);
    void visit(ParamVisitor& v, const std::string& prefix);
};

inline constexpr float kLeakySlope = 0.2f;

/// Packs a batch of channel-major [C, T, H, W] buffers into a channels-last tensor.
Var pack_volumes(const std::vector<const std::vector<float>*>& volumes, int c, int t, int h, int w);
/// Extracts sample `n` of a [N, T, H, W, C] tensor as channel-major [C, T, H, W].
std::vector<float> unpack_volume(const Var& x, int n);

/// [N, D] constant from row vectors.
Var pack_rows(const std::vector<std::vector<float>>& rows);

}  // namespace cftgan::nn
