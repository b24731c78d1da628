#include "cftgan/blob_file.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace cftgan {

namespace {

template <class T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    } else {
        return v;
    }
}

template <class T>
void put(std::string& out, T v) {
    v = to_little(v);
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <class T>
T get(const std::string& in, std::size_t& pos, ErrorCode corrupt) {
    if (pos + sizeof(T) > in.size()) throw Error(corrupt, "unexpected end of file");
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return to_little(v);
}

std::size_t element_count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

}  // namespace

const BlobArray& BlobFile::array(std::string_view name) const {
    for (const auto& a : arrays) {
        if (a.name == name) return a;
    }
    throw Error(ErrorCode::CorruptCheckpoint, "missing array '" + std::string(name) + "'");
}

void write_blob_file(const std::filesystem::path& path, const BlobFile& file) {
    if (file.magic.size() != 4) throw Error(ErrorCode::IOFailure, "magic must be four bytes");
    nlohmann::json manifest;
    manifest["meta"] = file.meta;
    manifest["arrays"] = nlohmann::json::array();
    for (const auto& a : file.arrays) {
        if (element_count(a.shape) != a.data.size()) {
            throw Error(ErrorCode::ShapeMismatch, "array '" + a.name + "' size does not match its shape");
        }
        manifest["arrays"].push_back({{"name", a.name}, {"shape", a.shape}});
    }
    const std::string text = manifest.dump();

    std::string out = file.magic;
    put<std::uint16_t>(out, file.version);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    for (const auto& a : file.arrays) {
        for (float f : a.data) put<float>(out, f);
    }

    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorCode::IOFailure, "cannot open " + path.string() + " for writing");
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!os) throw Error(ErrorCode::IOFailure, "write failed for " + path.string());
}

BlobFile read_blob_file(const std::filesystem::path& path, std::string_view magic, ErrorCode corrupt) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorCode::IOFailure, "cannot open " + path.string());
    const std::string in((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

    if (in.size() < 4 || in.compare(0, 4, magic) != 0) throw Error(corrupt, "bad magic in " + path.string());
    std::size_t pos = 4;
    BlobFile file;
    file.magic = std::string(magic);
    file.version = get<std::uint16_t>(in, pos, corrupt);
    const auto manifest_bytes = get<std::uint32_t>(in, pos, corrupt);
    if (pos + manifest_bytes > in.size()) throw Error(corrupt, "truncated manifest");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(in.substr(pos, manifest_bytes));
        pos += manifest_bytes;
        file.meta = manifest.at("meta");
        for (const auto& entry : manifest.at("arrays")) {
            BlobArray a;
            a.name = entry.at("name").get<std::string>();
            a.shape = entry.at("shape").get<std::vector<int>>();
            file.arrays.push_back(std::move(a));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(corrupt, std::string("bad manifest: ") + e.what());
    }
    for (auto& a : file.arrays) {
        const std::size_t n = element_count(a.shape);
        if (pos + n * sizeof(float) > in.size()) throw Error(corrupt, "truncated payload for '" + a.name + "'");
        a.data.resize(n);
        for (auto& f : a.data) f = get<float>(in, pos, corrupt);
    }
    if (pos != in.size()) throw Error(corrupt, "trailing bytes in " + path.string());
    return file;
}

}  // namespace cftgan
