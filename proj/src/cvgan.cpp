#include "cftgan/cvgan.hpp"

#include "cftgan/compositing.hpp"
#include "cftgan/error.hpp"

namespace cftgan {

CvGenerator::CvGenerator(const ModelDims& d, Rng& rng)
    : dims(d),
      cond(d.phi_dim, d.c_dim, rng),
      trunk(d.z_dim + d.c_dim, d.volume(), d.up_widths(), rng),
      foreground_head(d.up_widths()[3], 3, trunk.head_steps, true, rng),
      mask_head(d.up_widths()[3], 1, trunk.head_steps, true, rng),
      background(d, d.c_dim + d.z_dim, rng) {}

TexGenOutput CvGenerator::operator()(const Var& z, const Var& c, bool training) {
    require_rows(z, dims.z_dim, "cvgan z");
    require_rows(c, dims.c_dim, "cvgan c");
    if (z.dim(0) != c.dim(0)) throw Error(ErrorCode::ShapeMismatch, "cvgan: batch sizes differ");
    const Var h = trunk(ag::concat_last({z, c}), training);
    TexGenOutput out;
    out.foreground = ag::tanh(foreground_head(h, training));
    out.mask = ag::sigmoid(mask_head(h, training));
    out.background = background(ag::concat_last({c, z}), training);
    out.video = composite(out.mask, out.foreground, out.background);
    return out;
}

void CvGenerator::visit(nn::ParamVisitor& v, const std::string& prefix) {
    cond.visit(v, prefix + "cond.");
    trunk.visit(v, prefix + "trunk.");
    foreground_head.visit(v, prefix + "fg_head.");
    mask_head.visit(v, prefix + "mask_head.");
    background.visit(v, prefix + "background.");
}

GeneratedVideo generate_cvgan(CvGenerator& gen, const std::vector<float>& z, const std::vector<float>& c) {
    const auto& d = gen.dims;
    const auto out = gen(nn::pack_rows({z}), nn::pack_rows({c}), false);
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

float discriminate_cvgan(CvDiscriminator& disc, const VideoVolume& video, const captions::CaptionEmbedding& phi) {
    const auto& d = disc.net.dims;
    require_shape(video, 3, d.frames, d.height, d.width, "video");
    const Var x = nn::pack_volumes({&video.data}, 3, d.frames, d.height, d.width);
    return disc(x, nn::pack_rows({phi.phi}), false).item();
}

}  // namespace cftgan
