#include "busdx/overlay.hpp"

#include <stdexcept>
#include <vector>

#include <opencv2/imgproc.hpp>

namespace busdx {

ImageTensor render_overlay(const ImageTensor& original, const MaskTensor& mask, int thickness) {
    if (mask.height <= 0 || mask.width <= 0) {
        throw std::invalid_argument("render_overlay: empty mask tensor");
    }
    cv::Mat m;
    mask_to_mat(binarize(mask)).convertTo(m, CV_8U, 255.0);
    if (m.rows != original.height || m.cols != original.width) {
        cv::resize(m, m, cv::Size(original.width, original.height), 0, 0, cv::INTER_NEAREST);
    }
    std::vector<std::vector<cv::Point>> contours;
    cv::findContours(m, contours, cv::RETR_EXTERNAL, cv::CHAIN_APPROX_NONE);
    if (contours.empty()) {
        return original;
    }
    cv::Mat canvas = to_mat(original);  // BGR float
    if (canvas.channels() == 1) {
        cv::cvtColor(canvas, canvas, cv::COLOR_GRAY2BGR);
    }
    cv::drawContours(canvas, contours, -1, cv::Scalar(0.0, 0.0, 1.0), thickness);
    return from_mat(canvas);
}

void write_overlay(const std::filesystem::path& path, const ImageTensor& original, const MaskTensor& mask) {
    write_image(path, render_overlay(original, mask));
}

}  // namespace busdx
