#pragma once

// Captioned clips: synthetic moving shapes with analytic flow, the on-disk
// corpus format, and crop/cut/flip augmentation.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cftgan/rng.hpp"
#include "cftgan/volume.hpp"

namespace cftgan::data {

struct ClipSample {
    VideoVolume video;  // [3, T, H, W] in [-1, 1]
    FlowVolume flow;    // flow frame t maps frame t to t + 1; the last frame is zero
    std::string caption;
};

enum class ShapeKind { Square, Circle, Bar };
enum class Motion { Right, Left, Up, Down, Bounce, Grow };

struct NamedColor {
    std::string name;
    std::array<std::uint8_t, 3> rgb{};
};

struct SyntheticSpec {
    int canvas = 19;
    int frames = 10;
    ShapeKind shape = ShapeKind::Square;
    NamedColor color{"red", {220, 40, 40}};
    NamedColor background{"black", {0, 0, 0}};
    Motion motion = Motion::Right;
    int speed = 1;  // px/frame; for Grow, growth of the shape's extent per frame
    /// Shape extent in pixels; 0 picks canvas * 5 / 19.
    int size = 0;

    int shape_size() const { return size > 0 ? size : std::max(3, canvas * 5 / 19); }
};

std::string to_string(ShapeKind s);
std::string to_string(Motion m);
std::string caption_for(const SyntheticSpec& spec);

/// Renders the clip with a random start position. Throws ShapeOutOfBounds if
/// the shape cannot stay inside the canvas for every frame.
ClipSample generate_synthetic_sample(const SyntheticSpec& spec, Rng& rng);

struct Scale {
    int canvas;
    int frames;
    int crop;
    int clip_len;

    static Scale toy() { return {19, 10, 16, 8}; }
    static Scale paper() { return {76, 40, 64, 32}; }
};

/// 3 shapes x 4 colors x 4 translations x 2 backgrounds = 96 specs.
std::vector<SyntheticSpec> default_grid(const Scale& scale);

/// Deterministic corpus from the default grid: clip i is rendered with an rng
/// derived from (seed, i).
std::vector<ClipSample> synthesize_corpus(const std::vector<SyntheticSpec>& specs, std::uint64_t seed);

// ---------------------------------------------------------------------------
// On-disk corpus: <root>/<clip_id>/frames/%06d.png, flow.cff, caption.txt

/// Throws IOFailure.
void write_flow(const std::filesystem::path& path, const FlowVolume& flow);
/// Throws IOFailure if unreadable, MalformedClip if the content is invalid.
FlowVolume read_flow(const std::filesystem::path& path);

void write_clip(const std::filesystem::path& dir, const ClipSample& clip);
/// Throws MalformedClip (or IOFailure) when any part is missing or inconsistent.
ClipSample read_clip(const std::filesystem::path& dir);
void write_corpus(const std::filesystem::path& root, const std::vector<ClipSample>& clips);

enum class Split { Train, Val };

struct DatasetEntry {
    std::filesystem::path dir;
    std::string id;
    std::string caption;
    int frames = 0;
    int height = 0;
    int width = 0;
    Split split = Split::Train;
};

struct DatasetIndex {
    std::vector<DatasetEntry> entries;
    std::vector<std::string> warnings;  // one per skipped clip

    std::size_t size() const { return entries.size(); }
    std::vector<std::string> captions(Split split = Split::Train) const;
};

/// Indexes every well-formed clip directory under `root` in sorted order.
/// Malformed clips (or clips shorter than `min_frames`) are skipped with a
/// warning. Throws EmptyDataset if nothing survives, IOFailure if `root` is
/// not a directory. Every `val_every`-th clip (if > 0) is tagged Val.
DatasetIndex load_dataset(const std::filesystem::path& root, int min_frames = 1, int val_every = 0);

/// Reads every indexed clip, resizing to canvas x canvas when sizes differ.
std::vector<ClipSample> load_clips(const DatasetIndex& index, int canvas);

/// Bilinear spatial resize. Flow magnitudes are rescaled by the resize ratio per axis.
ClipSample resize_clip(const ClipSample& clip, int height, int width);

struct AugmentParams {
    int y0 = 0;
    int x0 = 0;
    int t0 = 0;
    bool flip = false;
};

/// Crop `crop` x `crop` at (y0, x0), cut `clip_len` frames from t0, optional
/// horizontal mirror (which negates u). The last flow frame of the cut is zeroed.
ClipSample apply_augmentation(const ClipSample& clip, int crop, int clip_len, const AugmentParams& p);

/// Random offsets, cut and flip with probability 0.5. Throws TooSmall, TooShort.
ClipSample augment_clip(const ClipSample& clip, int crop, int clip_len, Rng& rng);
AugmentParams sample_augmentation(const ClipSample& clip, int crop, int clip_len, Rng& rng);

}  // namespace cftgan::data
