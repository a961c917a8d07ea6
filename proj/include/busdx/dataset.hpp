#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "busdx/image.hpp"

namespace busdx {

/// Diagnostic class. The integer values are the one-hot target indices.
enum class ClassLabel : int { Benign = 0, Malignant = 1, Normal = 2 };

inline constexpr int kNumClasses = 3;
inline constexpr std::array<ClassLabel, kNumClasses> kAllClasses{
    ClassLabel::Benign, ClassLabel::Malignant, ClassLabel::Normal};

std::string_view to_string(ClassLabel label);
/// Accepts "benign"/"malignant"/"normal" in any case; nullopt otherwise.
std::optional<ClassLabel> parse_label(std::string_view text);
constexpr int index_of(ClassLabel label) { return static_cast<int>(label); }
ClassLabel label_from_index(int index);

struct SampleRecord {
    std::string id;  // e.g. "benign (12)"
    std::filesystem::path raw_path;
    std::vector<std::filesystem::path> mask_paths;
    ClassLabel label = ClassLabel::Benign;
};

struct DatasetIndex {
    std::vector<SampleRecord> records;
    std::map<ClassLabel, std::size_t> class_counts;
};

struct DatasetSplit {
    std::vector<SampleRecord> train;
    std::vector<SampleRecord> test;
    double ratio = 0.8;
    std::uint64_t seed = 15;
};

struct UltrasoundSample {
    std::string id;
    ClassLabel label = ClassLabel::Benign;
    ImageTensor image;  // source resolution, 3 channels in [0,1]
    MaskTensor mask;    // union of all annotation masks, values in {0,1}
    int source_height = 0;
    int source_width = 0;
};

/// Raised for record-level dataset problems; problems() lists every issue found.
class DatasetError : public std::runtime_error {
public:
    explicit DatasetError(std::vector<std::string> problems);
    [[nodiscard]] const std::vector<std::string>& problems() const { return problems_; }

private:
    std::vector<std::string> problems_;
};

struct ScanOptions {
    /// Decode every file during the scan so unreadable files surface early.
    bool verify_decode = false;
};

/// Indexes `<root>/{benign,malignant,normal}/<class> (<n>).png` together with
/// their `_mask` / `_mask_<k>` siblings. Records are ordered by class and then
/// by numeric id.
DatasetIndex scan_dataset(const std::filesystem::path& root, const ScanOptions& options = {});

UltrasoundSample load_sample(const SampleRecord& record);

/// Uniform seeded shuffle followed by a prefix/suffix split; not stratified.
DatasetSplit split_holdout(const DatasetIndex& index, double ratio = 0.8, std::uint64_t seed = 15);

DatasetIndex make_index(std::vector<SampleRecord> records);

/// JSON-lines manifest, one record per line: {"id","label","raw","masks"}.
void write_manifest(const DatasetIndex& index, const std::filesystem::path& path);
DatasetIndex read_manifest(const std::filesystem::path& path);

}  // namespace busdx
