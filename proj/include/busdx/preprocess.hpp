#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "busdx/image.hpp"

namespace busdx {

inline constexpr int kInputSize = 128;

/// Bilinear resample to size x size (default 128), channels preserved,
/// values clamped to [0,1].
ImageTensor resize_to_input(const ImageTensor& img, int size = kInputSize);

/// Bilinear resample of a mask followed by binarization at 0.5.
MaskTensor resize_mask(const MaskTensor& mask, int size = kInputSize);

/// Maps byte-range pixels to [0,1]. Images already inside [0,1] are returned
/// unchanged.
ImageTensor normalize_pixels(const ImageTensor& img);

struct SlicConfig {
    int region_size = 20;
    double ruler = 10.0;
    int iterations = 100;
    bool enforce_connectivity = true;

    void validate() const;
};

struct SuperpixelLabelMap {
    int height = 0;
    int width = 0;
    std::vector<int> labels;
    int n_labels = 0;

    int at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
};

/// Number of grid seeds along an axis of the given length.
int slic_grid_count(int length, int region_size);

/// SLIC superpixels: grid seeding, 3x3 low-gradient perturbation, localized
/// k-means in (color, position) space, then optional connectivity repair.
SuperpixelLabelMap slic_segment(const ImageTensor& img, const SlicConfig& cfg = {});

/// Replaces every pixel by the mean color of its superpixel.
ImageTensor render_superpixel_means(const ImageTensor& img, const SuperpixelLabelMap& labels);

struct KMeansConfig {
    int k = 4;
    int max_iterations = 100;
    double epsilon = 1e-4;
};

struct KMeansResult {
    ImageTensor quantized;
    std::vector<std::vector<float>> centers;
    std::vector<int> assignment;
    /// Sum of squared pixel-to-center distances after each assignment step.
    std::vector<double> objective;
    int iterations = 0;
};

/// k-means++ seeding followed by Lloyd iterations over pixel color vectors.
KMeansResult kmeanspp_cluster(const ImageTensor& img, const KMeansConfig& cfg, std::uint64_t seed = 15);

/// The quantized image from kmeanspp_cluster.
ImageTensor kmeanspp_quantize(const ImageTensor& img, const KMeansConfig& cfg, std::uint64_t seed = 15);

enum class PreprocessMode { Slic, KMeansPP, None };

std::string_view to_string(PreprocessMode mode);
std::optional<PreprocessMode> parse_preprocess_mode(std::string_view text);

struct PreprocessOptions {
    PreprocessMode mode = PreprocessMode::Slic;
    SlicConfig slic;
    KMeansConfig kmeans;
    std::uint64_t seed = 15;
};

/// Raw image path of the training and inference pipelines: resize to the
/// network input, unsupervised segmentation, normalization.
ImageTensor preprocess_image(const ImageTensor& raw, const PreprocessOptions& options);

}  // namespace busdx
