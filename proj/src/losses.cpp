#include "busdx/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace busdx {

namespace {

void check_shapes(const MaskTensor& a, const MaskTensor& b, const char* what) {
    if (a.height != b.height || a.width != b.width || a.values.size() != b.values.size()) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch");
    }
}

}  // namespace

double bce_loss(const MaskTensor& pred, const MaskTensor& target, double eps) {
    check_shapes(pred, target, "bce_loss");
    if (pred.values.empty()) {
        throw std::invalid_argument("bce_loss: empty masks");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.values.size(); ++i) {
        const double p = std::clamp(static_cast<double>(pred.values[i]), eps, 1.0 - eps);
        const double y = target.values[i];
        sum += y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    }
    return -sum / static_cast<double>(pred.values.size());
}

double dice_coefficient(const MaskTensor& pred, const MaskTensor& target, double smooth) {
    check_shapes(pred, target, "dice_coefficient");
    double inter = 0.0, sum_p = 0.0, sum_t = 0.0;
    for (std::size_t i = 0; i < pred.values.size(); ++i) {
        inter += static_cast<double>(pred.values[i]) * target.values[i];
        sum_p += pred.values[i];
        sum_t += target.values[i];
    }
    const double denom = sum_p + sum_t + smooth;
    if (denom == 0.0) {
        return 1.0;  // both empty with smooth = 0
    }
    return (2.0 * inter + smooth) / denom;
}

}  // namespace busdx
