#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cftgan/volume.hpp"

namespace cftgan {

struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // row-major RGB

    friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// 8-bit RGB PNG. Throws IOFailure.
void write_png(const std::filesystem::path& path, const RgbImage& image);
/// Any 8-bit or 16-bit PNG, converted to 8-bit RGB. Throws IOFailure.
RgbImage read_png(const std::filesystem::path& path);

/// [-1, 1] -> [0, 255], rounded and clamped.
std::uint8_t to_byte(float x);
/// [0, 255] -> [-1, 1].
inline float from_byte(std::uint8_t b) { return static_cast<float>(b) / 127.5f - 1.0f; }

RgbImage video_frame(const VideoVolume& video, int t);
void set_video_frame(VideoVolume& video, int t, const RgbImage& image);

}  // namespace cftgan
