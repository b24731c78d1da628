#pragma once

// Line-based `key = value` run configuration with `#` comments.

#include <filesystem>
#include <string>
#include <vector>

#include "cftgan/data.hpp"
#include "cftgan/training.hpp"

namespace cftgan {

struct RunConfig {
    std::string scale = "toy";
    train::TrainConfig train = train::TrainConfig::toy();
    data::Scale data = data::Scale::toy();
    std::uint64_t data_seed = 0;
    int val_every = 0;
    std::string model = "cftgan";
    std::int64_t checkpoint_every = 100;
    // Ablation protocol.
    std::string configs = "abcdef";
    int n_captions = 50;
    int n_repeats = 5;
    std::int64_t budget = 500;
    double max_seconds = 0.0;

    /// "toy" or "paper". Throws InvalidConfig.
    static RunConfig preset(const std::string& scale);

    /// Throws InvalidConfig for unknown keys or bad values. Setting `scale`
    /// resets every other key to that preset.
    void set(const std::string& key, const std::string& value);
    void validate() const;
    /// Every key in a stable order, `scale` first, so that parsing the text
    /// reproduces this config.
    std::string to_text() const;
};

/// Parses config text on top of the preset named by its `scale` key (toy if absent).
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
/// "key=value" override.
void apply_override(RunConfig& config, const std::string& assignment);

}  // namespace cftgan
