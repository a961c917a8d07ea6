#pragma once

#include <filesystem>

#include "busdx/image.hpp"

namespace busdx {

/// Draws the boundary of a binary mask onto the image in red. The mask is
/// resized (nearest neighbour) to the image size first. An empty mask
/// returns the image unchanged.
ImageTensor render_overlay(const ImageTensor& original, const MaskTensor& mask, int thickness = 1);

void write_overlay(const std::filesystem::path& path, const ImageTensor& original, const MaskTensor& mask);

}  // namespace busdx
