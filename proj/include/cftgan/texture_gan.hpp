#pragma once

// Caption- and flow-conditioned texture generator (U-net foreground, static
// background, mask compositing) and its doubly conditioned discriminator.

#include <array>
#include <string>
#include <vector>

#include "cftgan/flow_gan.hpp"

namespace cftgan {

/// c [N, c_dim] -> seed volume -> two up-sampling blocks reaching `target`.
struct CaptionMatrixEncoder {
    nn::Linear seed;
    nn::Dims3 seed_dims{};
    nn::Dims3 target{};
    int seed_channels = 0;
    int out_channels = 0;
    std::array<nn::UpBlock, 2> blocks;

    CaptionMatrixEncoder() = default;
    CaptionMatrixEncoder(int c_dim, int out_channels, const nn::Dims3& target, Rng& rng);
    /// [N, target T, H, W, out_channels]
    Var operator()(const Var& c, bool training);
    void visit(nn::ParamVisitor& v, const std::string& prefix);
};

/// Static image from concat(c, z), replicated over every frame.
struct BackgroundGenerator {
    int frames = 0;
    UpTrunk trunk;
    nn::UpBlock head;

    BackgroundGenerator() = default;
    BackgroundGenerator(const ModelDims& dims, int in_features, Rng& rng);
    /// [N, T, H, W, 3] with every frame identical.
    Var operator()(const Var& cz, bool training);
    void visit(nn::ParamVisitor& v, const std::string& prefix);
};

struct TexGenOutput {
    Var video;       // [N, T, H, W, 3]
    Var mask;        // [N, T, H, W, 1]
    Var foreground;  // [N, T, H, W, 3]
    Var background;  // [N, T, H, W, 3]
};

struct TextureGenerator {
    ModelDims dims;
    captions::ConditionParams cond;
    // U-net over the flow volume.
    std::vector<nn::AxisSteps> down_steps;
    std::array<nn::DownBlock, 4> encoder;
    CaptionMatrixEncoder caption_matrix;
    nn::Linear z_map;
    std::array<nn::UpBlock, 3> decoder;
    nn::UpBlock foreground_head;
    nn::UpBlock mask_head;
    BackgroundGenerator background;

    bool zero_caption_foreground = false;
    bool zero_caption_background = false;
    /// Replaces the encoder activation on skip connection s (finest first) with zeros.
    std::array<bool, 3> zero_skip{false, false, false};

    TextureGenerator() = default;
    TextureGenerator(const ModelDims& dims, Rng& rng);

    nn::Dims3 bottleneck() const;
    /// z [N, z_dim], c [N, c_dim], flow [N, T, H, W, 2]. Throws ShapeMismatch.
    TexGenOutput operator()(const Var& z, const Var& c, const Var& flow, bool training);
    void visit(nn::ParamVisitor& v, const std::string& prefix);
};

/// Video pathway with a two-block flow encoder joined after the second block
/// and the compressed caption after the third.
struct TextureDiscriminator {
    CaptionDiscriminator video_net;
    std::array<nn::DownBlock, 2> flow_encoder;

    TextureDiscriminator() = default;
    TextureDiscriminator(const ModelDims& dims, Rng& rng);

    Var logits(const Var& video, const Var& flow, const Var& phi, bool training);
    Var operator()(const Var& video, const Var& flow, const Var& phi, bool training) {
        return ag::sigmoid(logits(video, flow, phi, training));
    }
    void visit(nn::ParamVisitor& v, const std::string& prefix);
};

struct GeneratedVideo {
    VideoVolume video;
    MaskVolume mask;
    VideoVolume foreground;
    VideoVolume background;
};

/// Single-sample inference wrappers on channel-major volumes.
GeneratedVideo generate_video(TextureGenerator& gen, const std::vector<float>& z, const std::vector<float>& c,
                              const FlowVolume& flow);
float discriminate_video(TextureDiscriminator& disc, const VideoVolume& video, const FlowVolume& flow,
                         const captions::CaptionEmbedding& phi);

/// True iff every frame of `v` is bitwise identical to the first.
bool frames_identical(const Volume& v);
/// Generates the background for (z, c) and checks that it is static.
bool background_static_check(TextureGenerator& gen, const std::vector<float>& z, const std::vector<float>& c);

}  // namespace cftgan
