#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "busdx/backbone.hpp"
#include "busdx/classifier.hpp"
#include "busdx/preprocess.hpp"
#include "busdx/unet.hpp"

namespace busdx {

/// Everything a training or inference run needs. Stored as a `key = value`
/// text file; `#` starts a comment.
struct PipelineConfig {
    std::filesystem::path dataset_root = "data/Dataset_BUSI_with_GT";
    double split_ratio = 0.8;
    std::uint64_t split_seed = 15;
    PreprocessOptions preprocess;
    UNetConfig unet;
    BackboneKind backbone = BackboneKind::VGG16;
    std::filesystem::path weights_dir = "weights";
    HeadConfig head;
    std::filesystem::path output_dir = "runs/default";

    /// Sets one key from its text form. Throws std::invalid_argument on an
    /// unknown key or a malformed value.
    void set(const std::string& key, const std::string& value);

    /// Every key with its current value, in file order.
    [[nodiscard]] std::vector<std::pair<std::string, std::string>> entries() const;
    [[nodiscard]] std::string to_text() const;
    static PipelineConfig parse(const std::string& text);

    static PipelineConfig load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    /// Range checks across all sections.
    void validate() const;
};

/// Preprocessing settings as stored in checkpoint metadata.
nlohmann::json preprocess_to_json(const PreprocessOptions& options);
PreprocessOptions preprocess_from_json(const nlohmann::json& j);

}  // namespace busdx
