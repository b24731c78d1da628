#include "cftgan/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "cftgan/error.hpp"

namespace cftgan {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png(const std::filesystem::path& path, const RgbImage& image) {
    if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * 3) {
        throw Error(ErrorCode::ShapeMismatch, "image buffer size");
    }
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw Error(ErrorCode::IOFailure, "cannot open " + path.string() + " for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, nullptr);
        throw Error(ErrorCode::IOFailure, "libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorCode::IOFailure, "failed writing " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < image.height; ++y) {
        png_write_row(png, image.pixels.data() + static_cast<std::size_t>(y) * image.width * 3);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

RgbImage read_png(const std::filesystem::path& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw Error(ErrorCode::IOFailure, "cannot open " + path.string());
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw Error(ErrorCode::IOFailure, path.string() + " is not a PNG file");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw Error(ErrorCode::IOFailure, "libpng initialization failed");
    }
    RgbImage image;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(ErrorCode::IOFailure, "failed reading " + path.string());
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    image.width = static_cast<int>(png_get_image_width(png, info));
    image.height = static_cast<int>(png_get_image_height(png, info));
    if (png_get_rowbytes(png, info) != static_cast<std::size_t>(image.width) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(ErrorCode::IOFailure, path.string() + ": unsupported PNG layout");
    }
    image.pixels.resize(static_cast<std::size_t>(image.width) * image.height * 3);
    for (int y = 0; y < image.height; ++y) {
        png_read_row(png, image.pixels.data() + static_cast<std::size_t>(y) * image.width * 3, nullptr);
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

std::uint8_t to_byte(float x) {
    const float v = std::round((x + 1.0f) * 127.5f);
    return static_cast<std::uint8_t>(std::clamp(v, 0.0f, 255.0f));
}

RgbImage video_frame(const VideoVolume& video, int t) {
    RgbImage img{video.width, video.height, {}};
    img.pixels.resize(static_cast<std::size_t>(video.width) * video.height * 3);
    for (int y = 0; y < video.height; ++y) {
        for (int x = 0; x < video.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                img.pixels[(static_cast<std::size_t>(y) * video.width + x) * 3 + c] = to_byte(video.at(c, t, y, x));
            }
        }
    }
    return img;
}

void set_video_frame(VideoVolume& video, int t, const RgbImage& image) {
    if (image.width != video.width || image.height != video.height) {
        throw Error(ErrorCode::ShapeMismatch, "frame size differs from video size");
    }
    for (int y = 0; y < video.height; ++y) {
        for (int x = 0; x < video.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                video.at(c, t, y, x) = from_byte(image.pixels[(static_cast<std::size_t>(y) * video.width + x) * 3 + c]);
            }
        }
    }
}

}  // namespace cftgan
