#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include <opencv2/core.hpp>

namespace busdx {

/// Interleaved H x W x C float image. Values are expected in [0,1] once
/// normalized; raw byte-range images are allowed before normalize_pixels.
struct ImageTensor {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> pixels;

    ImageTensor() = default;
    ImageTensor(int h, int w, int c, float fill = 0.0f)
        : height(h), width(w), channels(c),
          pixels(static_cast<std::size_t>(h) * w * c, fill) {}

    [[nodiscard]] bool empty() const { return pixels.empty(); }
    [[nodiscard]] std::size_t size() const { return pixels.size(); }

    float& at(int y, int x, int c) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    float at(int y, int x, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
};

/// H x W single-channel mask. Probability form lives in [0,1], binarized
/// form in {0,1}.
struct MaskTensor {
    int height = 0;
    int width = 0;
    std::vector<float> values;

    MaskTensor() = default;
    MaskTensor(int h, int w, float fill = 0.0f)
        : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

    [[nodiscard]] std::size_t size() const { return values.size(); }
    float& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
    float at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

// OpenCV bridges. Color Mats are BGR on the OpenCV side and RGB here.
ImageTensor from_mat(const cv::Mat& mat);
cv::Mat to_mat(const ImageTensor& img);
MaskTensor mask_from_mat(const cv::Mat& mat);
cv::Mat mask_to_mat(const MaskTensor& mask);

/// Decodes an image file to a 3-channel tensor scaled to [0,1]; grayscale
/// sources are replicated across channels. Throws std::runtime_error naming
/// the path on decode failure.
ImageTensor read_image(const std::filesystem::path& path);

/// Decodes a mask file and binarizes it at 0.5 (after scaling to [0,1]).
MaskTensor read_mask(const std::filesystem::path& path);

void write_image(const std::filesystem::path& path, const ImageTensor& img);
void write_mask(const std::filesystem::path& path, const MaskTensor& mask);

MaskTensor binarize(const MaskTensor& mask, float threshold = 0.5f);

}  // namespace busdx
