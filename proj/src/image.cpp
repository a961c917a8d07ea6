#include "busdx/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace busdx {

namespace {

double scale_for_depth(int depth) {
    switch (depth) {
        case CV_8U: return 1.0 / 255.0;
        case CV_16U: return 1.0 / 65535.0;
        default: return 1.0;
    }
}

}  // namespace

ImageTensor from_mat(const cv::Mat& mat) {
    if (mat.empty()) {
        throw std::invalid_argument("from_mat: empty matrix");
    }
    cv::Mat f;
    mat.convertTo(f, CV_32F);
    const int ch = f.channels();
    if (ch == 3) {
        cv::cvtColor(f, f, cv::COLOR_BGR2RGB);
    } else if (ch == 4) {
        cv::cvtColor(f, f, cv::COLOR_BGRA2RGB);
    } else if (ch != 1) {
        throw std::invalid_argument("from_mat: unsupported channel count " + std::to_string(ch));
    }
    ImageTensor img(f.rows, f.cols, f.channels());
    for (int y = 0; y < f.rows; ++y) {
        const float* row = f.ptr<float>(y);
        std::copy(row, row + static_cast<std::size_t>(f.cols) * img.channels,
                  img.pixels.begin() + static_cast<std::ptrdiff_t>(y) * f.cols * img.channels);
    }
    return img;
}

cv::Mat to_mat(const ImageTensor& img) {
    if (img.channels != 1 && img.channels != 3) {
        throw std::invalid_argument("to_mat: expected 1 or 3 channels");
    }
    cv::Mat m(img.height, img.width, CV_32FC(img.channels));
    for (int y = 0; y < img.height; ++y) {
        std::copy_n(img.pixels.begin() + static_cast<std::ptrdiff_t>(y) * img.width * img.channels,
                    static_cast<std::size_t>(img.width) * img.channels, m.ptr<float>(y));
    }
    if (img.channels == 3) {
        cv::cvtColor(m, m, cv::COLOR_RGB2BGR);
    }
    return m;
}

MaskTensor mask_from_mat(const cv::Mat& mat) {
    if (mat.empty()) {
        throw std::invalid_argument("mask_from_mat: empty matrix");
    }
    cv::Mat gray = mat;
    if (mat.channels() == 3) {
        cv::cvtColor(mat, gray, cv::COLOR_BGR2GRAY);
    } else if (mat.channels() == 4) {
        cv::cvtColor(mat, gray, cv::COLOR_BGRA2GRAY);
    }
    cv::Mat f;
    gray.convertTo(f, CV_32F);
    MaskTensor mask(f.rows, f.cols);
    for (int y = 0; y < f.rows; ++y) {
        std::copy_n(f.ptr<float>(y), f.cols, mask.values.begin() + static_cast<std::ptrdiff_t>(y) * f.cols);
    }
    return mask;
}

cv::Mat mask_to_mat(const MaskTensor& mask) {
    cv::Mat m(mask.height, mask.width, CV_32F);
    for (int y = 0; y < mask.height; ++y) {
        std::copy_n(mask.values.begin() + static_cast<std::ptrdiff_t>(y) * mask.width, mask.width, m.ptr<float>(y));
    }
    return m;
}

ImageTensor read_image(const std::filesystem::path& path) {
    cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (raw.empty()) {
        throw std::runtime_error("cannot decode image: " + path.string());
    }
    const double scale = scale_for_depth(raw.depth());
    ImageTensor img = from_mat(raw);
    for (float& v : img.pixels) {
        v = static_cast<float>(std::clamp(v * scale, 0.0, 1.0));
    }
    if (img.channels == 1) {
        ImageTensor rgb(img.height, img.width, 3);
        for (std::size_t i = 0; i < img.pixels.size(); ++i) {
            rgb.pixels[3 * i] = rgb.pixels[3 * i + 1] = rgb.pixels[3 * i + 2] = img.pixels[i];
        }
        return rgb;
    }
    return img;
}

MaskTensor read_mask(const std::filesystem::path& path) {
    cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (raw.empty()) {
        throw std::runtime_error("cannot decode mask: " + path.string());
    }
    const double scale = scale_for_depth(raw.depth());
    MaskTensor mask = mask_from_mat(raw);
    for (float& v : mask.values) {
        v = static_cast<float>(v * scale);
    }
    return binarize(mask);
}

void write_image(const std::filesystem::path& path, const ImageTensor& img) {
    cv::Mat out;
    to_mat(img).convertTo(out, CV_8U, 255.0);
    if (!cv::imwrite(path.string(), out)) {
        throw std::runtime_error("cannot write image: " + path.string());
    }
}

void write_mask(const std::filesystem::path& path, const MaskTensor& mask) {
    cv::Mat out;
    mask_to_mat(mask).convertTo(out, CV_8U, 255.0);
    if (!cv::imwrite(path.string(), out)) {
        throw std::runtime_error("cannot write mask: " + path.string());
    }
}

MaskTensor binarize(const MaskTensor& mask, float threshold) {
    MaskTensor out = mask;
    for (float& v : out.values) {
        v = v >= threshold ? 1.0f : 0.0f;
    }
    return out;
}

}  // namespace busdx
