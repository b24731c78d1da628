#pragma once

#include <filesystem>

#include "cftgan/training.hpp"

namespace cftgan::train {

/// Writes "CFTK": every parameter, batch-norm buffer and Adam moment, plus k,
/// the rng state, the config and the caption encoder. Creates parent dirs.
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);

/// Throws CorruptCheckpoint on bad magic, truncation, or any name/shape
/// mismatch against the networks implied by the stored config.
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace cftgan::train
