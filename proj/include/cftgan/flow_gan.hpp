#pragma once

// Caption-conditioned flow generator and the caption-conditioned volume
// discriminator shared by the flow stage and the single-stage baseline.

#include <array>
#include <string>
#include <vector>

#include "cftgan/captions.hpp"
#include "cftgan/layers.hpp"
#include "cftgan/model_dims.hpp"
#include "cftgan/volume.hpp"

namespace cftgan {

using ag::Var;

/// Seed affine map + three up-sampling blocks shared by two output heads.
/// Output tensors are channels-last [N, T, H, W, C].
struct UpTrunk {
    nn::Linear seed;
    nn::BatchNorm seed_bn;
    nn::Dims3 seed_dims{};
    int seed_channels = 0;
    std::array<nn::UpBlock, 3> blocks;
    nn::AxisSteps head_steps{};

    UpTrunk() = default;
    UpTrunk(int in_features, const nn::Dims3& target, const std::array<int, 4>& widths, Rng& rng);
    Var operator()(const Var& x, bool training);
    void visit(nn::ParamVisitor& v, const std::string& prefix);
};

struct FlowGenOutput {
    Var flow;        // [N, T, H, W, 2] = mask * foreground
    Var mask;        // [N, T, H, W, 1]
    Var foreground;  // [N, T, H, W, 2]
};

struct FlowGenerator {
    ModelDims dims;
    captions::ConditionParams cond;
    UpTrunk trunk;
    nn::UpBlock foreground_head;
    nn::UpBlock mask_head;
    /// Replaces the condition vector with zeros before it enters the network.
    bool zero_caption = false;

    FlowGenerator() = default;
    FlowGenerator(const ModelDims& dims, Rng& rng);

    /// z [N, z_dim], c [N, c_dim]. Throws ShapeMismatch.
    FlowGenOutput operator()(const Var& z, const Var& c, bool training);
    void visit(nn::ParamVisitor& v, const std::string& prefix);
};

/// Four down-sampling blocks; the affinely compressed caption embedding is
/// tiled and concatenated after the third. An optional side input (already
/// down-sampled twice) is concatenated after the second.
struct CaptionDiscriminator {
    ModelDims dims;
    int in_channels = 0;
    int side_channels = 0;
    std::array<nn::DownBlock, 4> blocks;
    nn::Linear caption_map;
    nn::Linear score;
    std::vector<nn::AxisSteps> steps;
    nn::Dims3 after2{};
    nn::Dims3 after3{};
    nn::Dims3 after4{};

    CaptionDiscriminator() = default;
    CaptionDiscriminator(const ModelDims& dims, int in_channels, int side_channels, Rng& rng);

    /// Pre-sigmoid score [N, 1]. x [N, T, H, W, in_channels], phi [N, phi_dim].
    Var logits(const Var& x, const Var& phi, bool training, const Var* side = nullptr);
    Var operator()(const Var& x, const Var& phi, bool training, const Var* side = nullptr) {
        return ag::sigmoid(logits(x, phi, training, side));
    }
    void visit(nn::ParamVisitor& v, const std::string& prefix);
};

/// Flow-stage discriminator on [N, T, H, W, 2] flows, scaled by 1 / flow_cap.
struct FlowDiscriminator {
    CaptionDiscriminator net;

    FlowDiscriminator() = default;
    FlowDiscriminator(const ModelDims& dims, Rng& rng) : net(dims, 2, 0, rng) {}

    Var logits(const Var& flow, const Var& phi, bool training);
    Var operator()(const Var& flow, const Var& phi, bool training) { return ag::sigmoid(logits(flow, phi, training)); }
    void visit(nn::ParamVisitor& v, const std::string& prefix) { net.visit(v, prefix); }
};

/// Volume-level convenience wrappers for single samples (inference mode).
std::pair<FlowVolume, MaskVolume> generate_flow(FlowGenerator& gen, const std::vector<float>& z,
                                                const std::vector<float>& c);
float discriminate_flow(FlowDiscriminator& disc, const FlowVolume& flow, const captions::CaptionEmbedding& phi);

void require_rows(const Var& x, int cols, const char* what);

}  // namespace cftgan
