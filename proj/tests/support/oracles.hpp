#pragma once

// Independent reference computations used to check library results.

#include <cmath>
#include <optional>

#include "cftgan/data.hpp"
#include "cftgan/image_io.hpp"

namespace cftgan::testing {

/// Bilinear sample of channel c of frame t at continuous pixel-centre coordinates.
inline double bilinear(const Volume& v, int c, int t, double x, double y) {
    const double fx = x - 0.5, fy = y - 0.5;
    const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
    const double ax = fx - x0, ay = fy - y0;
    auto at = [&](int xx, int yy) {
        xx = std::clamp(xx, 0, v.width - 1);
        yy = std::clamp(yy, 0, v.height - 1);
        return static_cast<double>(v.at(c, t, yy, xx));
    };
    return (1 - ay) * ((1 - ax) * at(x0, y0) + ax * at(x0 + 1, y0)) + ay * ((1 - ax) * at(x0, y0 + 1) + ax * at(x0 + 1, y0 + 1));
}

struct WarpError {
    double mean_abs = 0.0;
    std::size_t samples = 0;
};

/// Samples frame t+1 at p + flow_t(p) and compares with frame t at p, over
/// pixels away from shape boundaries: interior shape pixels (all 4-neighbours
/// inside) and background pixels that stay background in both frames.
inline WarpError warp_error(const data::ClipSample& clip, const std::array<std::uint8_t, 3>& background) {
    const auto& v = clip.video;
    const float bg[3] = {from_byte(background[0]), from_byte(background[1]), from_byte(background[2])};
    auto inside = [&](int t, int y, int x) {
        if (y < 0 || x < 0 || y >= v.height || x >= v.width) return false;
        for (int c = 0; c < 3; ++c) {
            if (v.at(c, t, y, x) != bg[c]) return true;
        }
        return false;
    };
    WarpError out;
    double acc = 0.0;
    for (int t = 0; t + 1 < v.frames; ++t) {
        for (int y = 0; y < v.height; ++y) {
            for (int x = 0; x < v.width; ++x) {
                const bool in = inside(t, y, x);
                bool interior = true;
                const int nb[5][2] = {{0, 0}, {0, 1}, {0, -1}, {1, 0}, {-1, 0}};
                for (const auto& d : nb) {
                    if (inside(t, y + d[0], x + d[1]) != in) interior = false;
                    // Background must also stay uncovered in the next frame.
                    if (!in && inside(t + 1, y + d[0], x + d[1])) interior = false;
                }
                if (!interior) continue;
                const double tx = x + 0.5 + clip.flow.at(0, t, y, x);
                const double ty = y + 0.5 + clip.flow.at(1, t, y, x);
                for (int c = 0; c < 3; ++c) {
                    acc += std::fabs(bilinear(v, c, t + 1, tx, ty) - v.at(c, t, y, x));
                    ++out.samples;
                }
            }
        }
    }
    out.mean_abs = out.samples ? acc / static_cast<double>(out.samples) : 0.0;
    return out;
}

/// Horizontal mirror of a volume (no sign changes).
inline Volume mirror(const Volume& v) {
    Volume out = v;
    for (int c = 0; c < v.channels; ++c)
        for (int t = 0; t < v.frames; ++t)
            for (int y = 0; y < v.height; ++y)
                for (int x = 0; x < v.width; ++x) out.at(c, t, y, x) = v.at(c, t, y, v.width - 1 - x);
    return out;
}

/// Renders `spec` with successive seeds until the video equals `target`.
inline std::optional<data::ClipSample> find_render(const data::SyntheticSpec& spec, const VideoVolume& target,
                                                   int max_seeds = 20000) {
    for (int s = 0; s < max_seeds; ++s) {
        Rng rng(static_cast<std::uint64_t>(s));
        auto clip = data::generate_synthetic_sample(spec, rng);
        if (clip.video == target) return clip;
    }
    return std::nullopt;
}

/// Triple-loop RMSD on the 0-255 scale for equally sized videos.
inline double rmsd_bruteforce(const VideoVolume& a, const VideoVolume& b) {
    long double acc = 0.0L;
    std::size_t n = 0;
    for (int c = 0; c < 3; ++c)
        for (int t = 0; t < a.frames; ++t)
            for (int y = 0; y < a.height; ++y)
                for (int x = 0; x < a.width; ++x) {
                    const long double d = (static_cast<long double>(a.at(c, t, y, x)) - b.at(c, t, y, x)) * 127.5L;
                    acc += d * d;
                    ++n;
                }
    return static_cast<double>(std::sqrt(acc / n));
}

}  // namespace cftgan::testing
