#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace busdx {

struct TensorBlob {
    std::vector<std::int64_t> shape;
    std::vector<float> data;
};

/// Self-describing parameter file shared by checkpoints and backbone weights.
///
/// Layout: 8-byte magic "BUSDXC01", little-endian uint64 header length, a
/// JSON header {"meta": ..., "tensors": [{"name","shape","offset","count"}]},
/// then raw little-endian float32 data. Offsets count floats from the start of
/// the data section.
struct Container {
    nlohmann::json meta = nlohmann::json::object();
    std::map<std::string, TensorBlob> tensors;

    [[nodiscard]] const TensorBlob& tensor(const std::string& name) const;
};

void save_container(const std::filesystem::path& path, const Container& container);
Container load_container(const std::filesystem::path& path);

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(const std::string& text);
std::string sha256_file(const std::filesystem::path& path);
/// Digest over tensor names, shapes and values in name order.
std::string tensors_digest(const std::map<std::string, TensorBlob>& tensors);

}  // namespace busdx
