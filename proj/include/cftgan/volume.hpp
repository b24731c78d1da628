#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "cftgan/error.hpp"

namespace cftgan {

/// Dense channel-major volume laid out as [C, T, H, W].
struct Volume {
    int channels = 0;
    int frames = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Volume() = default;
    Volume(int c, int t, int h, int w, float fill = 0.0f)
        : channels(c), frames(t), height(h), width(w),
          data(static_cast<std::size_t>(c) * t * h * w, fill) {}

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }
    std::array<int, 4> dims() const { return {channels, frames, height, width}; }

    std::size_t index(int c, int t, int y, int x) const {
        return ((static_cast<std::size_t>(c) * frames + t) * height + y) * width + x;
    }
    float& at(int c, int t, int y, int x) { return data[index(c, t, y, x)]; }
    float at(int c, int t, int y, int x) const { return data[index(c, t, y, x)]; }

    std::span<float> plane(int c, int t) {
        return {data.data() + index(c, t, 0, 0), static_cast<std::size_t>(height) * width};
    }
    std::span<const float> plane(int c, int t) const {
        return {data.data() + index(c, t, 0, 0), static_cast<std::size_t>(height) * width};
    }

    bool same_shape(const Volume& o) const { return dims() == o.dims(); }
    friend bool operator==(const Volume&, const Volume&) = default;
};

/// [2, T, H, W]: channel 0 is u (horizontal px/frame), channel 1 is v.
struct FlowVolume : Volume {
    FlowVolume() = default;
    FlowVolume(int t, int h, int w) : Volume(2, t, h, w) {}
    explicit FlowVolume(Volume v) : Volume(std::move(v)) {}
};

/// [3, T, H, W] RGB with values in [-1, 1].
struct VideoVolume : Volume {
    VideoVolume() = default;
    VideoVolume(int t, int h, int w, float fill = 0.0f) : Volume(3, t, h, w, fill) {}
    explicit VideoVolume(Volume v) : Volume(std::move(v)) {}
};

/// [1, T, H, W] soft selector in [0, 1].
struct MaskVolume : Volume {
    MaskVolume() = default;
    MaskVolume(int t, int h, int w, float fill = 0.0f) : Volume(1, t, h, w, fill) {}
    explicit MaskVolume(Volume v) : Volume(std::move(v)) {}
};

inline void require_shape(const Volume& v, int c, int t, int h, int w, const char* what) {
    if (v.channels != c || v.frames != t || v.height != h || v.width != w) {
        throw Error(ErrorCode::ShapeMismatch, std::string(what) + " has unexpected shape");
    }
}

}  // namespace cftgan
