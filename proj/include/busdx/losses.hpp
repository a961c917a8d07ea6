#pragma once

#include "busdx/image.hpp"

namespace busdx {

inline constexpr double kBceEpsilon = 1e-7;

/// Mean binary cross-entropy over all pixels, predictions clipped to
/// [eps, 1 - eps]. Throws std::invalid_argument on shape mismatch.
double bce_loss(const MaskTensor& pred, const MaskTensor& target, double eps = kBceEpsilon);

/// (2 * sum(pred * target) + smooth) / (sum(pred) + sum(target) + smooth).
double dice_coefficient(const MaskTensor& pred, const MaskTensor& target, double smooth = 1.0);

}  // namespace busdx
