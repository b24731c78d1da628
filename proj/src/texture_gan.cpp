#include "cftgan/texture_gan.hpp"

#include <cstring>

#include "cftgan/compositing.hpp"
#include "cftgan/error.hpp"

namespace cftgan {

namespace {

int volume_size(const nn::Dims3& d) { return d[0] * d[1] * d[2]; }

Var zeros_like(const Var& x) { return Var::constant(x.shape(), 0.0f); }

}  // namespace

CaptionMatrixEncoder::CaptionMatrixEncoder(int c_dim, int out_ch, const nn::Dims3& tgt, Rng& rng)
    : target(tgt), seed_channels(2 * out_ch), out_channels(out_ch) {
    const nn::UpsamplingPlan plan = nn::plan_upsampling(tgt, 2);
    seed_dims = plan.seed;
    seed = nn::Linear(c_dim, volume_size(seed_dims) * seed_channels, rng);
    blocks[0] = nn::UpBlock(seed_channels, out_ch, plan.steps[0], false, rng);
    blocks[1] = nn::UpBlock(out_ch, out_ch, plan.steps[1], false, rng);
}

Var CaptionMatrixEncoder::operator()(const Var& c, bool training) {
    require_rows(c, seed.in_features(), "caption matrix c");
    Var h = ag::reshape(seed(c), {c.dim(0), seed_dims[0], seed_dims[1], seed_dims[2], seed_channels});
    for (auto& b : blocks) h = b(h, training);
    return h;
}

void CaptionMatrixEncoder::visit(nn::ParamVisitor& v, const std::string& prefix) {
    seed.visit(v, prefix + "seed.");
    blocks[0].visit(v, prefix + "up0.");
    blocks[1].visit(v, prefix + "up1.");
}

BackgroundGenerator::BackgroundGenerator(const ModelDims& d, int in_features, Rng& rng)
    : frames(d.frames),
      trunk(in_features, {1, d.height, d.width}, d.up_widths(), rng),
      head(d.up_widths()[3], 3, trunk.head_steps, true, rng) {}

Var BackgroundGenerator::operator()(const Var& cz, bool training) {
    return ag::repeat_frames(ag::tanh(head(trunk(cz, training), training)), frames);
}

void BackgroundGenerator::visit(nn::ParamVisitor& v, const std::string& prefix) {
    trunk.visit(v, prefix + "trunk.");
    head.visit(v, prefix + "head.");
}

TextureGenerator::TextureGenerator(const ModelDims& d, Rng& rng) : dims(d), cond(d.phi_dim, d.c_dim, rng) {
    down_steps = nn::plan_downsampling(d.volume(), 4);
    const auto w = d.down_widths();
    const int side = 2 * d.base_width;  // caption matrix and z projection widths
    encoder[0] = nn::DownBlock(2, w[0], down_steps[0], false, rng);
    for (int b = 1; b < 4; ++b) encoder[b] = nn::DownBlock(w[b - 1], w[b], down_steps[b], true, rng);
    caption_matrix = CaptionMatrixEncoder(d.c_dim, side, bottleneck(), rng);
    z_map = nn::Linear(d.z_dim, side, rng);
    decoder[0] = nn::UpBlock(w[3] + 2 * side, w[2], down_steps[3], false, rng);
    decoder[1] = nn::UpBlock(2 * w[2], w[1], down_steps[2], false, rng);
    decoder[2] = nn::UpBlock(2 * w[1], w[0], down_steps[1], false, rng);
    foreground_head = nn::UpBlock(2 * w[0], 3, down_steps[0], true, rng);
    mask_head = nn::UpBlock(2 * w[0], 1, down_steps[0], true, rng);
    background = BackgroundGenerator(d, d.c_dim + d.z_dim, rng);
}

nn::Dims3 TextureGenerator::bottleneck() const {
    nn::Dims3 dims3 = dims.volume();
    for (const auto& s : down_steps) dims3 = nn::apply_steps(dims3, s, false);
    return dims3;
}

TexGenOutput TextureGenerator::operator()(const Var& z, const Var& c, const Var& flow, bool training) {
    require_rows(z, dims.z_dim, "texture generator z");
    require_rows(c, dims.c_dim, "texture generator c");
    const int n = z.dim(0);
    if (c.dim(0) != n || flow.rank() != 5 || flow.dim(0) != n || flow.dim(1) != dims.frames ||
        flow.dim(2) != dims.height || flow.dim(3) != dims.width || flow.dim(4) != 2) {
        throw Error(ErrorCode::ShapeMismatch, "texture generator: flow or batch shape");
    }
    const Var c_fg = zero_caption_foreground ? zeros_like(c) : c;
    const Var c_bg = zero_caption_background ? zeros_like(c) : c;

    std::array<Var, 4> e;
    Var h = ag::scale(flow, 1.0f / dims.flow_cap);
    for (int b = 0; b < 4; ++b) h = e[b] = encoder[b](h, training);

    const nn::Dims3 bn = bottleneck();
    const Var zt = ag::tile_volume(z_map(z), bn[0], bn[1], bn[2]);
    h = ag::concat_last({e[3], caption_matrix(c_fg, training), zt});
    for (int b = 0; b < 3; ++b) {
        h = decoder[b](h, training);
        const int s = 2 - b;
        h = ag::concat_last({h, zero_skip[s] ? zeros_like(e[s]) : e[s]});
    }

    TexGenOutput out;
    out.foreground = ag::tanh(foreground_head(h, training));
    out.mask = ag::sigmoid(mask_head(h, training));
    out.background = background(ag::concat_last({c_bg, z}), training);
    out.video = composite(out.mask, out.foreground, out.background);
    return out;
}

void TextureGenerator::visit(nn::ParamVisitor& v, const std::string& prefix) {
    cond.visit(v, prefix + "cond.");
    for (int b = 0; b < 4; ++b) encoder[b].visit(v, prefix + "enc" + std::to_string(b) + ".");
    caption_matrix.visit(v, prefix + "caption_matrix.");
    z_map.visit(v, prefix + "z_map.");
    for (int b = 0; b < 3; ++b) decoder[b].visit(v, prefix + "dec" + std::to_string(b) + ".");
    foreground_head.visit(v, prefix + "fg_head.");
    mask_head.visit(v, prefix + "mask_head.");
    background.visit(v, prefix + "background.");
}

TextureDiscriminator::TextureDiscriminator(const ModelDims& d, Rng& rng)
    : video_net(d, 3, d.down_widths()[1], rng) {
    const auto w = d.down_widths();
    flow_encoder[0] = nn::DownBlock(2, w[0], video_net.steps[0], false, rng);
    flow_encoder[1] = nn::DownBlock(w[0], w[1], video_net.steps[1], true, rng);
}

Var TextureDiscriminator::logits(const Var& video, const Var& flow, const Var& phi, bool training) {
    const auto& d = video_net.dims;
    if (flow.rank() != 5 || flow.dim(0) != video.dim(0) || flow.dim(1) != d.frames || flow.dim(2) != d.height ||
        flow.dim(3) != d.width || flow.dim(4) != 2) {
        throw Error(ErrorCode::ShapeMismatch, "texture discriminator: flow shape");
    }
    const Var f = flow_encoder[1](flow_encoder[0](ag::scale(flow, 1.0f / d.flow_cap), training), training);
    return video_net.logits(video, phi, training, &f);
}

void TextureDiscriminator::visit(nn::ParamVisitor& v, const std::string& prefix) {
    video_net.visit(v, prefix);
    flow_encoder[0].visit(v, prefix + "flow_enc0.");
    flow_encoder[1].visit(v, prefix + "flow_enc1.");
}

GeneratedVideo generate_video(TextureGenerator& gen, const std::vector<float>& z, const std::vector<float>& c,
                              const FlowVolume& flow) {
    const auto& d = gen.dims;
    require_shape(flow, 2, d.frames, d.height, d.width, "flow");
    const Var f = nn::pack_volumes({&flow.data}, 2, d.frames, d.height, d.width);
    const auto out = gen(nn::pack_rows({z}), nn::pack_rows({c}), f, false);
    GeneratedVideo g;
    g.video = VideoVolume(d.frames, d.height, d.width);
    g.video.data = nn::unpack_volume(out.video, 0);
    g.mask = MaskVolume(d.frames, d.height, d.width);
    g.mask.data = nn::unpack_volume(out.mask, 0);
    g.foreground = VideoVolume(d.frames, d.height, d.width);
    g.foreground.data = nn::unpack_volume(out.foreground, 0);
    g.background = VideoVolume(d.frames, d.height, d.width);
    g.background.data = nn::unpack_volume(out.background, 0);
    return g;
}

float discriminate_video(TextureDiscriminator& disc, const VideoVolume& video, const FlowVolume& flow,
                         const captions::CaptionEmbedding& phi) {
    const auto& d = disc.video_net.dims;
    require_shape(video, 3, d.frames, d.height, d.width, "video");
    require_shape(flow, 2, d.frames, d.height, d.width, "flow");
    const Var x = nn::pack_volumes({&video.data}, 3, d.frames, d.height, d.width);
    const Var f = nn::pack_volumes({&flow.data}, 2, d.frames, d.height, d.width);
    return disc(x, f, nn::pack_rows({phi.phi}), false).item();
}

bool frames_identical(const Volume& v) {
    const std::size_t plane = static_cast<std::size_t>(v.height) * v.width;
    for (int c = 0; c < v.channels; ++c) {
        const float* first = v.plane(c, 0).data();
        for (int t = 1; t < v.frames; ++t) {
            if (std::memcmp(first, v.plane(c, t).data(), plane * sizeof(float)) != 0) return false;
        }
    }
    return true;
}

bool background_static_check(TextureGenerator& gen, const std::vector<float>& z, const std::vector<float>& c) {
    const auto& d = gen.dims;
    const Var cz = ag::concat_last({nn::pack_rows({c}), nn::pack_rows({z})});
    VideoVolume bg(d.frames, d.height, d.width);
    bg.data = nn::unpack_volume(gen.background(cz, false), 0);
    return frames_identical(bg);
}

}  // namespace cftgan
