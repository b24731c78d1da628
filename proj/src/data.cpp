#include "cftgan/data.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "cftgan/error.hpp"
#include "cftgan/image_io.hpp"

namespace cftgan::data {

std::string to_string(ShapeKind s) {
    switch (s) {
        case ShapeKind::Square: return "square";
        case ShapeKind::Circle: return "circle";
        case ShapeKind::Bar: return "bar";
    }
    return "shape";
}

std::string to_string(Motion m) {
    switch (m) {
        case Motion::Right: return "right";
        case Motion::Left: return "left";
        case Motion::Up: return "up";
        case Motion::Down: return "down";
        case Motion::Bounce: return "back and forth";
        case Motion::Grow: return "closer";
    }
    return "somewhere";
}

std::string caption_for(const SyntheticSpec& spec) {
    return "a " + spec.color.name + " " + to_string(spec.shape) + " is moving " + to_string(spec.motion) + " on a " +
           spec.background.name + " background";
}

namespace {

/// Axis-aligned footprint of the shape at one frame.
struct Footprint {
    double x0, y0;  // top-left
    double w, h;
};

Footprint footprint_at(const SyntheticSpec& spec, double x0, double y0, double extent) {
    const double h = spec.shape == ShapeKind::Bar ? std::max(2.0, std::floor(extent / 2.0)) : extent;
    return {x0, y0, extent, h};
}

bool inside(const SyntheticSpec& spec, const Footprint& f, double px, double py) {
    if (spec.shape == ShapeKind::Circle) {
        const double r = f.w / 2.0;
        const double dx = px - (f.x0 + r);
        const double dy = py - (f.y0 + r);
        return dx * dx + dy * dy <= r * r;
    }
    return px >= f.x0 && px < f.x0 + f.w && py >= f.y0 && py < f.y0 + f.h;
}

double shade(const Footprint& f, double px, double py) {
    const double lx = (px - f.x0) / f.w;
    const double ly = (py - f.y0) / f.h;
    return 0.8 + 0.2 * std::cos(2.0 * std::numbers::pi * lx) * std::cos(2.0 * std::numbers::pi * ly);
}

int uniform_int(Rng& rng, int lo, int hi) {
    return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

[[noreturn]] void out_of_bounds(const SyntheticSpec& spec) {
    throw Error(ErrorCode::ShapeOutOfBounds, "shape cannot stay inside the canvas: " + caption_for(spec));
}

}  // namespace

ClipSample generate_synthetic_sample(const SyntheticSpec& spec, Rng& rng) {
    const int n = spec.canvas;
    const int frames = spec.frames;
    const int size = spec.shape_size();
    if (n <= 0 || frames <= 0 || spec.speed < 0 || size > n) out_of_bounds(spec);
    const int travel = spec.speed * (frames - 1);
    const int h = spec.shape == ShapeKind::Bar ? std::max(2, size / 2) : size;

    std::vector<Footprint> fp(frames);
    switch (spec.motion) {
        case Motion::Right:
        case Motion::Left: {
            if (n - size - travel < 0) out_of_bounds(spec);
            const int x = uniform_int(rng, 0, n - size - travel);
            const int y = uniform_int(rng, 0, n - h);
            const int dir = spec.motion == Motion::Right ? 1 : -1;
            const int start = dir > 0 ? x : x + travel;
            for (int t = 0; t < frames; ++t) fp[t] = footprint_at(spec, start + dir * spec.speed * t, y, size);
            break;
        }
        case Motion::Up:
        case Motion::Down: {
            if (n - h - travel < 0) out_of_bounds(spec);
            const int x = uniform_int(rng, 0, n - size);
            const int y = uniform_int(rng, 0, n - h - travel);
            const int dir = spec.motion == Motion::Down ? 1 : -1;
            const int start = dir > 0 ? y : y + travel;
            for (int t = 0; t < frames; ++t) fp[t] = footprint_at(spec, x, start + dir * spec.speed * t, size);
            break;
        }
        case Motion::Bounce: {
            const int span = n - size;
            if (span <= 0 && spec.speed > 0) out_of_bounds(spec);
            const int x = uniform_int(rng, 0, std::max(0, span));
            const int y = uniform_int(rng, 0, n - h);
            for (int t = 0; t < frames; ++t) {
                int pos = x;
                if (span > 0) {
                    const int p = (x + spec.speed * t) % (2 * span);
                    pos = span - std::abs(p - span);
                }
                fp[t] = footprint_at(spec, pos, y, size);
            }
            break;
        }
        case Motion::Grow: {
            const int final_size = size + travel;
            const int final_h = spec.shape == ShapeKind::Bar ? std::max(2, final_size / 2) : final_size;
            if (final_size > n || final_h > n) out_of_bounds(spec);
            const double cx = uniform_int(rng, 0, n - final_size) + final_size / 2.0;
            const double cy = uniform_int(rng, 0, n - final_h) + final_h / 2.0;
            for (int t = 0; t < frames; ++t) {
                const double e = size + spec.speed * t;
                Footprint f = footprint_at(spec, 0, 0, e);
                f.x0 = cx - f.w / 2.0;
                f.y0 = cy - f.h / 2.0;
                fp[t] = f;
            }
            break;
        }
    }

    ClipSample clip;
    clip.caption = caption_for(spec);
    clip.video = VideoVolume(frames, n, n);
    clip.flow = FlowVolume(frames, n, n);
    for (int t = 0; t < frames; ++t) {
        const Footprint& f = fp[t];
        for (int y = 0; y < n; ++y) {
            for (int x = 0; x < n; ++x) {
                const double px = x + 0.5;
                const double py = y + 0.5;
                const bool in = inside(spec, f, px, py);
                const double s = in ? shade(f, px, py) : 1.0;
                for (int c = 0; c < 3; ++c) {
                    const double value = in ? spec.color.rgb[c] * s : spec.background.rgb[c];
                    clip.video.at(c, t, y, x) = from_byte(static_cast<std::uint8_t>(std::lround(value)));
                }
                if (!in || t + 1 == frames) continue;
                // Position of this material point in the next frame.
                const Footprint& g = fp[t + 1];
                const double nx = g.x0 + (px - f.x0) * g.w / f.w;
                const double ny = g.y0 + (py - f.y0) * g.h / f.h;
                clip.flow.at(0, t, y, x) = static_cast<float>(nx - px);
                clip.flow.at(1, t, y, x) = static_cast<float>(ny - py);
            }
        }
    }
    return clip;
}

std::vector<SyntheticSpec> default_grid(const Scale& scale) {
    const std::vector<NamedColor> colors = {
        {"red", {220, 40, 40}}, {"green", {40, 200, 60}}, {"blue", {40, 80, 230}}, {"yellow", {230, 210, 40}}};
    const std::vector<NamedColor> backgrounds = {{"black", {0, 0, 0}}, {"white", {255, 255, 255}}};
    std::vector<SyntheticSpec> specs;
    for (auto shape : {ShapeKind::Square, ShapeKind::Circle, ShapeKind::Bar}) {
        for (const auto& color : colors) {
            for (auto motion : {Motion::Right, Motion::Left, Motion::Up, Motion::Down}) {
                for (const auto& bg : backgrounds) {
                    SyntheticSpec s;
                    s.canvas = scale.canvas;
                    s.frames = scale.frames;
                    s.shape = shape;
                    s.color = color;
                    s.background = bg;
                    s.motion = motion;
                    s.speed = 1;
                    specs.push_back(s);
                }
            }
        }
    }
    return specs;
}

std::vector<ClipSample> synthesize_corpus(const std::vector<SyntheticSpec>& specs, std::uint64_t seed) {
    std::vector<ClipSample> clips;
    clips.reserve(specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i) {
        Rng rng(mix_seed(seed ^ mix_seed(i + 1)));
        clips.push_back(generate_synthetic_sample(specs[i], rng));
    }
    return clips;
}

// ---------------------------------------------------------------------------
// Flow files

namespace {

constexpr char kFlowMagic[4] = {'C', 'F', 'T', 'F'};
constexpr std::uint16_t kFlowVersion = 1;

template <class T>
void put_le(std::ostream& os, T v) {
    unsigned char b[sizeof(T)];
    std::uint64_t bits = 0;
    if constexpr (std::is_same_v<T, float>) {
        std::uint32_t u;
        std::memcpy(&u, &v, 4);
        bits = u;
    } else {
        bits = static_cast<std::uint64_t>(v);
    }
    for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
bool get_le(std::istream& is, T& v) {
    unsigned char b[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) return false;
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    if constexpr (std::is_same_v<T, float>) {
        const auto u = static_cast<std::uint32_t>(bits);
        std::memcpy(&v, &u, 4);
    } else {
        v = static_cast<T>(bits);
    }
    return true;
}

}  // namespace

void write_flow(const std::filesystem::path& path, const FlowVolume& flow) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorCode::IOFailure, "cannot open " + path.string() + " for writing");
    os.write(kFlowMagic, 4);
    put_le<std::uint16_t>(os, kFlowVersion);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(flow.frames));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(flow.height));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(flow.width));
    for (float v : flow.data) put_le(os, v);
    if (!os) throw Error(ErrorCode::IOFailure, "failed writing " + path.string());
}

FlowVolume read_flow(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorCode::IOFailure, "cannot open " + path.string());
    char magic[4];
    std::uint16_t version = 0;
    std::uint32_t t = 0, h = 0, w = 0;
    if (!is.read(magic, 4) || std::memcmp(magic, kFlowMagic, 4) != 0) {
        throw Error(ErrorCode::MalformedClip, path.string() + ": bad flow magic");
    }
    if (!get_le(is, version) || version != kFlowVersion || !get_le(is, t) || !get_le(is, h) || !get_le(is, w)) {
        throw Error(ErrorCode::MalformedClip, path.string() + ": bad flow header");
    }
    if (t == 0 || h == 0 || w == 0 || static_cast<std::uint64_t>(t) * h * w > (1ull << 28)) {
        throw Error(ErrorCode::MalformedClip, path.string() + ": implausible flow dims");
    }
    FlowVolume flow(static_cast<int>(t), static_cast<int>(h), static_cast<int>(w));
    for (auto& v : flow.data) {
        if (!get_le(is, v)) throw Error(ErrorCode::MalformedClip, path.string() + ": truncated flow payload");
    }
    if (is.peek() != std::char_traits<char>::eof()) {
        throw Error(ErrorCode::MalformedClip, path.string() + ": trailing bytes");
    }
    return flow;
}

// ---------------------------------------------------------------------------
// Clips and corpora

namespace {

std::string frame_name(int t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06d.png", t);
    return buf;
}

}  // namespace

void write_clip(const std::filesystem::path& dir, const ClipSample& clip) {
    std::error_code ec;
    std::filesystem::create_directories(dir / "frames", ec);
    if (ec) throw Error(ErrorCode::IOFailure, "cannot create " + (dir / "frames").string() + ": " + ec.message());
    for (int t = 0; t < clip.video.frames; ++t) write_png(dir / "frames" / frame_name(t), video_frame(clip.video, t));
    write_flow(dir / "flow.cff", clip.flow);
    std::ofstream os(dir / "caption.txt");
    os << clip.caption << '\n';
    if (!os) throw Error(ErrorCode::IOFailure, "failed writing caption in " + dir.string());
}

ClipSample read_clip(const std::filesystem::path& dir) {
    auto malformed = [&](const std::string& why) { return Error(ErrorCode::MalformedClip, dir.string() + ": " + why); };
    ClipSample clip;
    {
        std::ifstream is(dir / "caption.txt");
        if (!is) throw malformed("missing caption.txt");
        std::getline(is, clip.caption);
        while (!clip.caption.empty() && (clip.caption.back() == '\r' || clip.caption.back() == '\n')) {
            clip.caption.pop_back();
        }
        if (clip.caption.find_first_not_of(" \t") == std::string::npos) throw malformed("empty caption");
    }
    std::vector<std::filesystem::path> frames;
    std::error_code ec;
    for (std::filesystem::directory_iterator it(dir / "frames", ec), end; !ec && it != end; it.increment(ec)) {
        if (it->path().extension() == ".png") frames.push_back(it->path());
    }
    if (frames.empty()) throw malformed("no frames");
    std::sort(frames.begin(), frames.end());
    for (std::size_t t = 0; t < frames.size(); ++t) {
        if (frames[t].filename() != frame_name(static_cast<int>(t))) throw malformed("frame numbering has gaps");
    }
    try {
        for (std::size_t t = 0; t < frames.size(); ++t) {
            const RgbImage img = read_png(frames[t]);
            if (t == 0) clip.video = VideoVolume(static_cast<int>(frames.size()), img.height, img.width);
            set_video_frame(clip.video, static_cast<int>(t), img);
        }
        clip.flow = read_flow(dir / "flow.cff");
    } catch (const Error& e) {
        throw malformed(e.what());
    }
    if (clip.flow.frames != clip.video.frames || clip.flow.height != clip.video.height ||
        clip.flow.width != clip.video.width) {
        throw malformed("flow dims differ from frame dims");
    }
    return clip;
}

void write_corpus(const std::filesystem::path& root, const std::vector<ClipSample>& clips) {
    std::error_code ec;
    std::filesystem::create_directories(root, ec);
    if (ec || !std::filesystem::is_directory(root)) throw Error(ErrorCode::IOFailure, "cannot create " + root.string());
    for (std::size_t i = 0; i < clips.size(); ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "clip_%05zu", i);
        write_clip(root / id, clips[i]);
    }
}

std::vector<std::string> DatasetIndex::captions(Split split) const {
    std::vector<std::string> out;
    for (const auto& e : entries) {
        if (e.split == split) out.push_back(e.caption);
    }
    return out;
}

DatasetIndex load_dataset(const std::filesystem::path& root, int min_frames, int val_every) {
    if (!std::filesystem::is_directory(root)) throw Error(ErrorCode::IOFailure, root.string() + " is not a directory");
    std::vector<std::filesystem::path> dirs;
    for (const auto& e : std::filesystem::directory_iterator(root)) {
        if (e.is_directory()) dirs.push_back(e.path());
    }
    std::sort(dirs.begin(), dirs.end());
    DatasetIndex index;
    for (const auto& dir : dirs) {
        try {
            const ClipSample clip = read_clip(dir);
            if (clip.video.frames < min_frames) {
                throw Error(ErrorCode::MalformedClip, dir.string() + ": " + std::to_string(clip.video.frames) +
                                                          " frames, need " + std::to_string(min_frames));
            }
            DatasetEntry entry{dir, dir.filename().string(), clip.caption, clip.video.frames, clip.video.height,
                               clip.video.width, Split::Train};
            if (val_every > 0 && (index.entries.size() + 1) % static_cast<std::size_t>(val_every) == 0) {
                entry.split = Split::Val;
            }
            index.entries.push_back(std::move(entry));
        } catch (const Error& e) {
            index.warnings.push_back(e.what());
        }
    }
    if (index.entries.empty()) throw Error(ErrorCode::EmptyDataset, "no usable clips under " + root.string());
    return index;
}

std::vector<ClipSample> load_clips(const DatasetIndex& index, int canvas) {
    std::vector<ClipSample> clips;
    clips.reserve(index.size());
    for (const auto& e : index.entries) {
        ClipSample c = read_clip(e.dir);
        if (c.video.height != canvas || c.video.width != canvas) c = resize_clip(c, canvas, canvas);
        clips.push_back(std::move(c));
    }
    return clips;
}

ClipSample resize_clip(const ClipSample& clip, int height, int width) {
    const int sh = clip.video.height;
    const int sw = clip.video.width;
    const double ry = static_cast<double>(sh) / height;
    const double rx = static_cast<double>(sw) / width;
    auto resize = [&](const Volume& src, Volume& dst) {
        for (int c = 0; c < src.channels; ++c) {
            for (int t = 0; t < src.frames; ++t) {
                for (int y = 0; y < height; ++y) {
                    const double fy = std::clamp((y + 0.5) * ry - 0.5, 0.0, sh - 1.0);
                    const int y0 = static_cast<int>(fy);
                    const int y1 = std::min(y0 + 1, sh - 1);
                    const double ay = fy - y0;
                    for (int x = 0; x < width; ++x) {
                        const double fx = std::clamp((x + 0.5) * rx - 0.5, 0.0, sw - 1.0);
                        const int x0 = static_cast<int>(fx);
                        const int x1 = std::min(x0 + 1, sw - 1);
                        const double ax = fx - x0;
                        const double top = (1 - ax) * src.at(c, t, y0, x0) + ax * src.at(c, t, y0, x1);
                        const double bot = (1 - ax) * src.at(c, t, y1, x0) + ax * src.at(c, t, y1, x1);
                        dst.at(c, t, y, x) = static_cast<float>((1 - ay) * top + ay * bot);
                    }
                }
            }
        }
    };
    ClipSample out;
    out.caption = clip.caption;
    out.video = VideoVolume(clip.video.frames, height, width);
    out.flow = FlowVolume(clip.flow.frames, height, width);
    resize(clip.video, out.video);
    resize(clip.flow, out.flow);
    const std::size_t plane = static_cast<std::size_t>(out.flow.frames) * height * width;
    for (std::size_t i = 0; i < plane; ++i) {
        out.flow.data[i] = static_cast<float>(out.flow.data[i] / rx);
        out.flow.data[plane + i] = static_cast<float>(out.flow.data[plane + i] / ry);
    }
    return out;
}

ClipSample apply_augmentation(const ClipSample& clip, int crop, int clip_len, const AugmentParams& p) {
    if (clip.video.height < crop || clip.video.width < crop) {
        throw Error(ErrorCode::TooSmall, "clip is " + std::to_string(clip.video.height) + "x" +
                                             std::to_string(clip.video.width) + ", crop is " + std::to_string(crop));
    }
    if (clip.video.frames < clip_len) {
        throw Error(ErrorCode::TooShort, "clip has " + std::to_string(clip.video.frames) + " frames, need " +
                                             std::to_string(clip_len));
    }
    if (p.y0 < 0 || p.x0 < 0 || p.t0 < 0 || p.y0 + crop > clip.video.height || p.x0 + crop > clip.video.width ||
        p.t0 + clip_len > clip.video.frames) {
        throw Error(ErrorCode::ShapeMismatch, "augmentation window outside the clip");
    }
    ClipSample out;
    out.caption = clip.caption;
    out.video = VideoVolume(clip_len, crop, crop);
    out.flow = FlowVolume(clip_len, crop, crop);
    for (int t = 0; t < clip_len; ++t) {
        const bool last = t + 1 == clip_len;
        for (int y = 0; y < crop; ++y) {
            for (int x = 0; x < crop; ++x) {
                const int sx = p.x0 + (p.flip ? crop - 1 - x : x);
                for (int c = 0; c < 3; ++c) out.video.at(c, t, y, x) = clip.video.at(c, p.t0 + t, p.y0 + y, sx);
                if (last) continue;
                const float u = clip.flow.at(0, p.t0 + t, p.y0 + y, sx);
                out.flow.at(0, t, y, x) = p.flip ? -u : u;
                out.flow.at(1, t, y, x) = clip.flow.at(1, p.t0 + t, p.y0 + y, sx);
            }
        }
    }
    return out;
}

AugmentParams sample_augmentation(const ClipSample& clip, int crop, int clip_len, Rng& rng) {
    if (clip.video.height < crop || clip.video.width < crop) throw Error(ErrorCode::TooSmall, "clip smaller than crop");
    if (clip.video.frames < clip_len) throw Error(ErrorCode::TooShort, "clip shorter than clip_len");
    AugmentParams p;
    p.y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(clip.video.height - crop + 1)));
    p.x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(clip.video.width - crop + 1)));
    p.t0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(clip.video.frames - clip_len + 1)));
    p.flip = rng.coin();
    return p;
}

ClipSample augment_clip(const ClipSample& clip, int crop, int clip_len, Rng& rng) {
    return apply_augmentation(clip, crop, clip_len, sample_augmentation(clip, crop, clip_len, rng));
}

}  // namespace cftgan::data
