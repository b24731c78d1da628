#include "cftgan/flow_gan.hpp"

#include "cftgan/compositing.hpp"
#include "cftgan/error.hpp"

namespace cftgan {

void require_rows(const Var& x, int cols, const char* what) {
    if (x.rank() != 2 || x.dim(1) != cols) {
        throw Error(ErrorCode::ShapeMismatch, std::string(what) + ": expected [N, " + std::to_string(cols) + "]");
    }
}

namespace {

int volume_size(const nn::Dims3& d) { return d[0] * d[1] * d[2]; }

void require_volume(const Var& x, const nn::Dims3& d, int channels, const char* what) {
    if (x.rank() != 5 || x.dim(1) != d[0] || x.dim(2) != d[1] || x.dim(3) != d[2] || x.dim(4) != channels) {
        throw Error(ErrorCode::ShapeMismatch, std::string(what) + ": unexpected volume shape");
    }
}

}  // namespace

UpTrunk::UpTrunk(int in_features, const nn::Dims3& target, const std::array<int, 4>& widths, Rng& rng) {
    const nn::UpsamplingPlan plan = nn::plan_upsampling(target, 4);
    seed_dims = plan.seed;
    seed_channels = widths[0];
    seed = nn::Linear(in_features, volume_size(seed_dims) * seed_channels, rng, 0.02f, false);
    seed_bn = nn::BatchNorm(seed_channels, rng);
    for (int b = 0; b < 3; ++b) blocks[b] = nn::UpBlock(widths[b], widths[b + 1], plan.steps[b], false, rng);
    head_steps = plan.steps[3];
}

Var UpTrunk::operator()(const Var& x, bool training) {
    Var h = seed(x);
    h = ag::reshape(h, {x.dim(0), seed_dims[0], seed_dims[1], seed_dims[2], seed_channels});
    h = ag::relu(seed_bn(h, training));
    for (auto& b : blocks) h = b(h, training);
    return h;
}

void UpTrunk::visit(nn::ParamVisitor& v, const std::string& prefix) {
    seed.visit(v, prefix + "seed.");
    seed_bn.visit(v, prefix + "seed_bn.");
    for (int b = 0; b < 3; ++b) blocks[b].visit(v, prefix + "up" + std::to_string(b) + ".");
}

FlowGenerator::FlowGenerator(const ModelDims& d, Rng& rng)
    : dims(d),
      cond(d.phi_dim, d.c_dim, rng),
      trunk(d.z_dim + d.c_dim, d.volume(), d.up_widths(), rng),
      foreground_head(d.up_widths()[3], 2, trunk.head_steps, true, rng),
      mask_head(d.up_widths()[3], 1, trunk.head_steps, true, rng) {}

FlowGenOutput FlowGenerator::operator()(const Var& z, const Var& c, bool training) {
    require_rows(z, dims.z_dim, "flow generator z");
    require_rows(c, dims.c_dim, "flow generator c");
    if (z.dim(0) != c.dim(0)) throw Error(ErrorCode::ShapeMismatch, "flow generator: batch sizes differ");
    const Var cc = zero_caption ? Var::constant(c.shape(), 0.0f) : c;
    const Var h = trunk(ag::concat_last({z, cc}), training);
    FlowGenOutput out;
    out.foreground = ag::scale(ag::tanh(foreground_head(h, training)), dims.flow_cap);
    out.mask = ag::sigmoid(mask_head(h, training));
    out.flow = composite_over_zero(out.mask, out.foreground);
    return out;
}

void FlowGenerator::visit(nn::ParamVisitor& v, const std::string& prefix) {
    cond.visit(v, prefix + "cond.");
    trunk.visit(v, prefix + "trunk.");
    foreground_head.visit(v, prefix + "fg_head.");
    mask_head.visit(v, prefix + "mask_head.");
}

CaptionDiscriminator::CaptionDiscriminator(const ModelDims& d, int in_ch, int side_ch, Rng& rng)
    : dims(d), in_channels(in_ch), side_channels(side_ch) {
    steps = nn::plan_downsampling(d.volume(), 4);
    const auto w = d.down_widths();
    blocks[0] = nn::DownBlock(in_ch, w[0], steps[0], false, rng);
    blocks[1] = nn::DownBlock(w[0], w[1], steps[1], true, rng);
    blocks[2] = nn::DownBlock(w[1] + side_ch, w[2], steps[2], true, rng);
    blocks[3] = nn::DownBlock(w[2] + d.cap_dim, w[3], steps[3], true, rng);
    caption_map = nn::Linear(d.phi_dim, d.cap_dim, rng);
    after2 = nn::apply_steps(nn::apply_steps(d.volume(), steps[0], false), steps[1], false);
    after3 = nn::apply_steps(after2, steps[2], false);
    after4 = nn::apply_steps(after3, steps[3], false);
    score = nn::Linear(volume_size(after4) * w[3], 1, rng);
}

Var CaptionDiscriminator::logits(const Var& x, const Var& phi, bool training, const Var* side) {
    require_volume(x, dims.volume(), in_channels, "discriminator input");
    require_rows(phi, dims.phi_dim, "discriminator phi");
    const int n = x.dim(0);
    if (phi.dim(0) != n) throw Error(ErrorCode::ShapeMismatch, "discriminator: batch sizes differ");
    Var h = blocks[1](blocks[0](x, training), training);
    if (side_channels > 0) {
        if (side == nullptr) throw Error(ErrorCode::ShapeMismatch, "discriminator: missing side input");
        require_volume(*side, after2, side_channels, "discriminator side input");
        h = ag::concat_last({h, *side});
    }
    h = blocks[2](h, training);
    const Var cap = ag::tile_volume(caption_map(phi), after3[0], after3[1], after3[2]);
    h = blocks[3](ag::concat_last({h, cap}), training);
    return score(ag::reshape(h, {n, static_cast<int>(h.numel() / n)}));
}

void CaptionDiscriminator::visit(nn::ParamVisitor& v, const std::string& prefix) {
    for (int b = 0; b < 4; ++b) blocks[b].visit(v, prefix + "down" + std::to_string(b) + ".");
    caption_map.visit(v, prefix + "caption_map.");
    score.visit(v, prefix + "score.");
}

Var FlowDiscriminator::logits(const Var& flow, const Var& phi, bool training) {
    return net.logits(ag::scale(flow, 1.0f / net.dims.flow_cap), phi, training);
}

std::pair<FlowVolume, MaskVolume> generate_flow(FlowGenerator& gen, const std::vector<float>& z,
                                                const std::vector<float>& c) {
    const auto out = gen(nn::pack_rows({z}), nn::pack_rows({c}), false);
    const auto& d = gen.dims;
    FlowVolume flow(d.frames, d.height, d.width);
    flow.data = nn::unpack_volume(out.flow, 0);
    MaskVolume mask(d.frames, d.height, d.width);
    mask.data = nn::unpack_volume(out.mask, 0);
    return {std::move(flow), std::move(mask)};
}

float discriminate_flow(FlowDiscriminator& disc, const FlowVolume& flow, const captions::CaptionEmbedding& phi) {
    const auto& d = disc.net.dims;
    require_shape(flow, 2, d.frames, d.height, d.width, "flow");
    const Var x = nn::pack_volumes({&flow.data}, 2, d.frames, d.height, d.width);
    return disc(x, nn::pack_rows({phi.phi}), false).item();
}

}  // namespace cftgan
