#include "busdx/preprocess.hpp"

#include <algorithm>
#include <stdexcept>

#include <opencv2/imgproc.hpp>

namespace busdx {

ImageTensor resize_to_input(const ImageTensor& img, int size) {
    if (img.height < 1 || img.width < 1 || img.channels < 1) {
        throw std::invalid_argument("resize_to_input: zero-sized image");
    }
    ImageTensor out;
    if (img.height == size && img.width == size) {
        out = img;
    } else {
        cv::Mat src(img.height, img.width, CV_32FC(img.channels), const_cast<float*>(img.pixels.data()));
        cv::Mat dst;
        cv::resize(src, dst, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);
        out = ImageTensor(size, size, img.channels);
        std::copy_n(dst.ptr<float>(0), out.pixels.size(), out.pixels.begin());
    }
    for (float& v : out.pixels) {
        v = std::clamp(v, 0.0f, 1.0f);
    }
    return out;
}

MaskTensor resize_mask(const MaskTensor& mask, int size) {
    if (mask.height < 1 || mask.width < 1) {
        throw std::invalid_argument("resize_mask: zero-sized mask");
    }
    if (mask.height == size && mask.width == size) {
        return binarize(mask);
    }
    cv::Mat src(mask.height, mask.width, CV_32F, const_cast<float*>(mask.values.data()));
    cv::Mat dst;
    cv::resize(src, dst, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);
    MaskTensor out(size, size);
    std::copy_n(dst.ptr<float>(0), out.values.size(), out.values.begin());
    return binarize(out);
}

ImageTensor normalize_pixels(const ImageTensor& img) {
    const auto [lo, hi] = std::minmax_element(img.pixels.begin(), img.pixels.end());
    if (img.pixels.empty() || (*lo >= 0.0f && *hi <= 1.0f)) {
        return img;
    }
    ImageTensor out = img;
    for (float& v : out.pixels) {
        v = std::clamp(v / 255.0f, 0.0f, 1.0f);
    }
    return out;
}

std::string_view to_string(PreprocessMode mode) {
    switch (mode) {
        case PreprocessMode::Slic: return "slic";
        case PreprocessMode::KMeansPP: return "kmeanspp";
        case PreprocessMode::None: return "none";
    }
    return "none";
}

std::optional<PreprocessMode> parse_preprocess_mode(std::string_view text) {
    for (auto m : {PreprocessMode::Slic, PreprocessMode::KMeansPP, PreprocessMode::None}) {
        if (text == to_string(m)) {
            return m;
        }
    }
    return std::nullopt;
}

ImageTensor preprocess_image(const ImageTensor& raw, const PreprocessOptions& options) {
    ImageTensor img = resize_to_input(normalize_pixels(raw));
    switch (options.mode) {
        case PreprocessMode::Slic:
            img = render_superpixel_means(img, slic_segment(img, options.slic));
            break;
        case PreprocessMode::KMeansPP:
            img = kmeanspp_quantize(img, options.kmeans, options.seed);
            break;
        case PreprocessMode::None:
            break;
    }
    return normalize_pixels(img);
}

}  // namespace busdx
