#pragma once

#include <array>

#include "cftgan/layers.hpp"

namespace cftgan {

/// Sizes shared by every network of a run.
struct ModelDims {
    int frames = 8;
    int height = 16;
    int width = 16;
    int z_dim = 16;
    int c_dim = 16;
    int phi_dim = 32;
    int cap_dim = 8;      // caption compression width inside discriminators
    int base_width = 8;   // channels of the finest block; coarser blocks double it
    float flow_cap = 8.0f;

    static constexpr int kBlocks = 4;

    static ModelDims paper() { return {32, 64, 64, 100, 128, 256, 64, 64, 8.0f}; }
    static ModelDims toy() { return {}; }

    nn::Dims3 volume() const { return {frames, height, width}; }
    /// Widths of the four up-sampling blocks, coarsest first.
    std::array<int, kBlocks> up_widths() const { return {8 * base_width, 4 * base_width, 2 * base_width, base_width}; }
    /// Widths of the four down-sampling blocks, finest first.
    std::array<int, kBlocks> down_widths() const { return {base_width, 2 * base_width, 4 * base_width, 8 * base_width}; }

    friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

}  // namespace cftgan
