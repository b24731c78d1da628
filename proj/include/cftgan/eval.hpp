#pragma once

// Video distance with duration/resolution alignment, the six-way ablation
// harness and sample strip export.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cftgan/image_io.hpp"
#include "cftgan/training.hpp"

namespace cftgan::eval {

/// Evenly spaced indices into [0, from) including both endpoints. Requires 1 <= to <= from.
std::vector<int> uniform_indices(int from, int to);
VideoVolume subsample_frames(const VideoVolume& v, int frames);
/// Box (area) average onto a height x width grid no larger than the source.
VideoVolume area_downscale(const VideoVolume& v, int height, int width);

/// Root-mean-square per-pixel, per-channel distance on the 0-255 scale after
/// subsampling the longer video and downscaling the larger one. Throws EmptyVideo.
double rmsd(const VideoVolume& a, const VideoVolume& b);

struct AblationConfig {
    char tag = 'a';
    std::string description;

    /// Returns `base` with this configuration's caption ablations applied.
    train::TrainConfig apply(train::TrainConfig base) const;
    train::ModelKind model() const { return tag == 'f' ? train::ModelKind::CvGan : train::ModelKind::CftGan; }
};

/// Tags 'a'..'f'. Throws InvalidConfig for anything else.
AblationConfig ablation_config(char tag);
std::vector<AblationConfig> all_ablation_configs();

struct AblationRow {
    char tag = 'a';
    double mean_rmsd = 0.0;
    double std_rmsd = 0.0;
    int n_captions = 0;
    int n_repeats = 0;
};

struct AblationReport {
    std::vector<AblationRow> rows;
    std::string to_csv() const;
};

struct AblationOptions {
    int n_captions = 50;
    int n_repeats = 5;
    /// Training iterations per configuration.
    std::int64_t budget = 500;
    /// Wall-clock limit per configuration's training; 0 disables it.
    double max_seconds = 0.0;
    /// If set, models are read from <dir>/<tag>.cftk instead of being trained.
    std::optional<std::filesystem::path> models_dir;
    /// With models_dir set, train (and save) missing models instead of failing.
    bool train_missing = false;
    std::uint64_t seed = 0;
};

/// For each configuration: obtain a model, then per repeat generate one video
/// for each of n_captions sampled captions and average its RMSD to the
/// dataset clip bearing that caption. Throws BudgetExceeded, MissingModel,
/// InvalidConfig (too few captions).
AblationReport run_ablation(const std::vector<AblationConfig>& configs, const train::TrainConfig& base,
                            const std::vector<data::ClipSample>& dataset, const captions::CaptionEncoder& encoder,
                            const AblationOptions& options);

void write_text(const std::filesystem::path& path, const std::string& text);

/// Strip of every 4th frame side by side.
RgbImage frame_strip(const VideoVolume& v);
/// Writes sample_%03d.png strips and captions.txt into `dir`. An empty list
/// writes nothing. Throws IOFailure.
void export_samples(const std::vector<VideoVolume>& videos, const std::vector<std::string>& captions,
                    const std::filesystem::path& dir);

}  // namespace cftgan::eval
