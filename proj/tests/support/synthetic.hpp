#pragma once

// Synthetic BUSI-style data for tests: speckled gray background, a dark
// lesion whose outline depends on the class (smooth ellipse for benign,
// spiky star for malignant, none for normal).

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "busdx/dataset.hpp"
#include "busdx/image.hpp"

namespace busdx::testing {

struct SyntheticCase {
    cv::Mat image;  // CV_8UC3
    cv::Mat mask;   // CV_8UC1, 0/255
};

inline SyntheticCase make_case(ClassLabel label, int index, int height = 150, int width = 180) {
    std::mt19937 rng(1000u * static_cast<unsigned>(index_of(label)) + static_cast<unsigned>(index));
    std::normal_distribution<double> noise(0.0, 18.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    cv::Mat gray(height, width, CV_8UC1);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double base = 120.0 + 50.0 * y / height;
            gray.at<unsigned char>(y, x) = cv::saturate_cast<unsigned char>(base + noise(rng));
        }
    }
    cv::Mat mask = cv::Mat::zeros(height, width, CV_8UC1);
    if (label != ClassLabel::Normal) {
        const cv::Point2d c(width * (0.35 + 0.3 * u(rng)), height * (0.35 + 0.3 * u(rng)));
        const double r = std::min(height, width) * (0.16 + 0.08 * u(rng));
        std::vector<cv::Point> poly;
        const int spikes = 7 + static_cast<int>(4 * u(rng));
        for (int k = 0; k < 96; ++k) {
            const double t = 2.0 * M_PI * k / 96;
            double rr = label == ClassLabel::Benign ? r * (1.0 + 0.25 * std::cos(t))
                                                    : r * (0.75 + 0.35 * std::abs(std::sin(spikes * t / 2)));
            poly.emplace_back(cvRound(c.x + rr * std::cos(t)), cvRound(c.y + 0.8 * rr * std::sin(t)));
        }
        cv::fillPoly(mask, std::vector<std::vector<cv::Point>>{poly}, cv::Scalar(255));
        const double level = label == ClassLabel::Benign ? 40.0 : 65.0;
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                if (mask.at<unsigned char>(y, x)) {
                    gray.at<unsigned char>(y, x) = cv::saturate_cast<unsigned char>(level + 0.5 * noise(rng));
                }
            }
        }
    }
    SyntheticCase out;
    cv::cvtColor(gray, out.image, cv::COLOR_GRAY2BGR);
    out.mask = mask;
    return out;
}

/// Writes `<root>/<class>/<class> (<n>).png` plus `_mask.png` siblings,
/// n = 1..per_class[c].
inline void write_dataset(const std::filesystem::path& root, const std::vector<int>& per_class, int height = 150,
                          int width = 180) {
    for (ClassLabel label : kAllClasses) {
        const std::string name(to_string(label));
        const auto dir = root / name;
        std::filesystem::create_directories(dir);
        for (int n = 1; n <= per_class[index_of(label)]; ++n) {
            const SyntheticCase sc = make_case(label, n, height, width);
            const std::string stem = name + " (" + std::to_string(n) + ")";
            cv::imwrite((dir / (stem + ".png")).string(), sc.image);
            cv::imwrite((dir / (stem + "_mask.png")).string(), sc.mask);
        }
    }
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path = std::filesystem::temp_directory_path() / ("busdx_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

}  // namespace busdx::testing
