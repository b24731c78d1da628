#pragma once

// Container shared by the caption-encoder artifact ("CFTC") and training
// checkpoints ("CFTK"):
//
//   magic[4] | u16 version | u32 manifest_bytes | manifest (JSON) | float32 payloads
//
// The manifest lists every array's name and shape in payload order, plus a
// free-form "meta" object. All integers and floats are little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cftgan/error.hpp"

namespace cftgan {

struct BlobArray {
    std::string name;
    std::vector<int> shape;
    std::vector<float> data;
};

struct BlobFile {
    std::string magic;
    std::uint16_t version = 1;
    nlohmann::json meta = nlohmann::json::object();
    std::vector<BlobArray> arrays;

    const BlobArray& array(std::string_view name) const;
};

/// Creates missing parent directories. Throws IOFailure.
void write_blob_file(const std::filesystem::path& path, const BlobFile& file);

/// Throws `corrupt` on bad magic, truncated payloads or inconsistent shapes,
/// IOFailure if the file cannot be opened.
BlobFile read_blob_file(const std::filesystem::path& path, std::string_view magic, ErrorCode corrupt);

}  // namespace cftgan
