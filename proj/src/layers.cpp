#include "cftgan/layers.hpp"

#include <string>

#include "cftgan/error.hpp"

namespace cftgan::nn {

namespace {

std::vector<float> gaussian(std::size_t n, float mean, float stddev, Rng& rng) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(mean + stddev * rng.normal());
    return v;
}

bool is_power_of_two(int x) { return x > 0 && (x & (x - 1)) == 0; }

}  // namespace

Linear::Linear(int in, int out, Rng& rng, float init_std, bool with_bias)
    : weight(Var::parameter({in, out}, gaussian(static_cast<std::size_t>(in) * out, 0.0f, init_std, rng))) {
    if (with_bias) bias = Var::parameter({out}, std::vector<float>(out, 0.0f));
}

void Linear::visit(ParamVisitor& v, const std::string& prefix) {
    v.param(prefix + "weight", weight);
    if (bias) v.param(prefix + "bias", bias);
}

Conv3d::Conv3d(int cin, int cout, const ag::ConvGeom& g, bool with_bias, Rng& rng, float init_std) : geom(g) {
    const std::size_t k = static_cast<std::size_t>(geom.taps()) * cin;
    weight = Var::parameter({static_cast<int>(k), cout}, gaussian(k * cout, 0.0f, init_std, rng));
    if (with_bias) bias = Var::parameter({cout}, std::vector<float>(cout, 0.0f));
}

void Conv3d::visit(ParamVisitor& v, const std::string& prefix) {
    v.param(prefix + "weight", weight);
    if (bias) v.param(prefix + "bias", *bias);
}

BatchNorm::BatchNorm(int channels, Rng& rng)
    : gamma(Var::parameter({channels}, gaussian(channels, 1.0f, 0.02f, rng))),
      beta(Var::parameter({channels}, std::vector<float>(channels, 0.0f))) {
    state.running_mean.assign(channels, 0.0f);
    state.running_var.assign(channels, 1.0f);
}

void BatchNorm::visit(ParamVisitor& v, const std::string& prefix) {
    v.param(prefix + "gamma", gamma);
    v.param(prefix + "beta", beta);
    v.buffer(prefix + "running_mean", state.running_mean);
    v.buffer(prefix + "running_var", state.running_var);
}

UpsamplingPlan plan_upsampling(const Dims3& target, int blocks) {
    UpsamplingPlan plan;
    plan.steps.assign(blocks, AxisSteps{false, false, false});
    for (int a = 0; a < 3; ++a) {
        // At least two voxels per axis so the seed's batch norm does not
        // reduce over the batch alone.
        const int seed = std::max(std::min(2, target[a]), target[a] >> blocks);
        if (target[a] % seed != 0 || !is_power_of_two(target[a] / seed)) {
            throw Error(ErrorCode::ShapeMismatch,
                        "axis size " + std::to_string(target[a]) + " is not reachable by doubling");
        }
        plan.seed[a] = seed;
        int doublings = 0;
        while ((seed << doublings) < target[a]) ++doublings;
        for (int b = blocks - doublings; b < blocks; ++b) plan.steps[b][a] = true;
    }
    return plan;
}

std::vector<AxisSteps> plan_downsampling(const Dims3& input, int blocks) {
    const UpsamplingPlan up = plan_upsampling(input, blocks);
    return {up.steps.rbegin(), up.steps.rend()};
}

Dims3 apply_steps(Dims3 dims, const AxisSteps& steps, bool up) {
    for (int a = 0; a < 3; ++a) {
        if (steps[a]) dims[a] = up ? dims[a] * 2 : dims[a] / 2;
    }
    return dims;
}

ag::ConvGeom up_geom(const AxisSteps& steps) {
    ag::ConvGeom g;
    for (int a = 0; a < 3; ++a) {
        g.axes[a] = steps[a] ? ag::AxisGeom{4, 4, 2, 1} : ag::AxisGeom{1, 3, 1, 1};
    }
    return g;
}

ag::ConvGeom down_geom(const AxisSteps& steps) {
    ag::ConvGeom g;
    for (int a = 0; a < 3; ++a) {
        g.axes[a] = steps[a] ? ag::AxisGeom{1, 4, 2, 1} : ag::AxisGeom{1, 3, 1, 1};
    }
    return g;
}

UpBlock::UpBlock(int cin, int cout, const AxisSteps& steps, bool last, Rng& rng)
    : conv(cin, cout, up_geom(steps), last, rng) {
    if (!last) bn.emplace(cout, rng);
}

Var UpBlock::operator()(const Var& x, bool training) {
    Var y = conv(x);
    if (bn) y = ag::relu((*bn)(y, training));
    return y;
}

void UpBlock::visit(ParamVisitor& v, const std::string& prefix) {
    conv.visit(v, prefix + "conv.");
    if (bn) bn->visit(v, prefix + "bn.");
}

DownBlock::DownBlock(int cin, int cout, const AxisSteps& steps, bool with_bn, Rng& rng)
    : conv(cin, cout, down_geom(steps), !with_bn, rng) {
    if (with_bn) bn.emplace(cout, rng);
}

Var DownBlock::operator()(const Var& x, bool training) {
    Var y = conv(x);
    if (bn) y = (*bn)(y, training);
    return ag::leaky_relu(y, kLeakySlope);
}

void DownBlock::visit(ParamVisitor& v, const std::string& prefix) {
    conv.visit(v, prefix + "conv.");
    if (bn) bn->visit(v, prefix + "bn.");
}

Var pack_volumes(const std::vector<const std::vector<float>*>& volumes, int c, int t, int h, int w) {
    const int n = static_cast<int>(volumes.size());
    const std::size_t vox = static_cast<std::size_t>(t) * h * w;
    std::vector<float> out(static_cast<std::size_t>(n) * vox * c);
    for (int b = 0; b < n; ++b) {
        const auto& src = *volumes[b];
        if (src.size() != vox * c) throw Error(ErrorCode::ShapeMismatch, "pack_volumes: sample size");
        for (int ch = 0; ch < c; ++ch) {
            for (std::size_t v = 0; v < vox; ++v) out[(b * vox + v) * c + ch] = src[ch * vox + v];
        }
    }
    return Var::constant({n, t, h, w, c}, std::move(out));
}

std::vector<float> unpack_volume(const Var& x, int n) {
    const int c = x.dim(4);
    const std::size_t vox = static_cast<std::size_t>(x.dim(1)) * x.dim(2) * x.dim(3);
    std::vector<float> out(vox * c);
    const auto v = x.value();
    for (int ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < vox; ++i) out[ch * vox + i] = v[(n * vox + i) * c + ch];
    }
    return out;
}

Var pack_rows(const std::vector<std::vector<float>>& rows) {
    if (rows.empty()) throw Error(ErrorCode::ShapeMismatch, "pack_rows: empty batch");
    const int d = static_cast<int>(rows[0].size());
    std::vector<float> out;
    out.reserve(rows.size() * d);
    for (const auto& r : rows) {
        if (static_cast<int>(r.size()) != d) throw Error(ErrorCode::ShapeMismatch, "pack_rows: ragged rows");
        out.insert(out.end(), r.begin(), r.end());
    }
    return Var::constant({static_cast<int>(rows.size()), d}, std::move(out));
}

}  // namespace cftgan::nn
