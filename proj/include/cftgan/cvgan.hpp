#pragma once

// Single-stage caption-conditioned video generator: foreground, mask and
// static background all generated directly from concat(z, c).

#include <string>
#include <vector>

#include "cftgan/texture_gan.hpp"

namespace cftgan {

struct CvGenerator {
    ModelDims dims;
    captions::ConditionParams cond;
    UpTrunk trunk;
    nn::UpBlock foreground_head;
    nn::UpBlock mask_head;
    BackgroundGenerator background;

    CvGenerator() = default;
    CvGenerator(const ModelDims& dims, Rng& rng);

    /// z [N, z_dim], c [N, c_dim]; flow fields of the output are unused.
    TexGenOutput operator()(const Var& z, const Var& c, bool training);
    void visit(nn::ParamVisitor& v, const std::string& prefix);
};

/// Caption-conditioned discriminator on [N, T, H, W, 3] videos.
struct CvDiscriminator {
    CaptionDiscriminator net;

    CvDiscriminator() = default;
    CvDiscriminator(const ModelDims& dims, Rng& rng) : net(dims, 3, 0, rng) {}

    Var logits(const Var& video, const Var& phi, bool training) { return net.logits(video, phi, training); }
    Var operator()(const Var& video, const Var& phi, bool training) { return net(video, phi, training); }
    void visit(nn::ParamVisitor& v, const std::string& prefix) { net.visit(v, prefix); }
};

GeneratedVideo generate_cvgan(CvGenerator& gen, const std::vector<float>& z, const std::vector<float>& c);
float discriminate_cvgan(CvDiscriminator& disc, const VideoVolume& video, const captions::CaptionEmbedding& phi);

}  // namespace cftgan
