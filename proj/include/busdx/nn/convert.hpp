#pragma once

#include "busdx/image.hpp"
#include "busdx/nn/ops.hpp"

namespace busdx::nn {

inline Tensor to_chw(const ImageTensor& img) {
    Tensor t(img.channels, img.height, img.width);
    const std::size_t plane = t.plane();
    for (std::size_t p = 0; p < plane; ++p) {
        for (int c = 0; c < img.channels; ++c) {
            t.data[c * plane + p] = img.pixels[p * img.channels + c];
        }
    }
    return t;
}

inline ImageTensor to_hwc(const Tensor& t) {
    ImageTensor img(t.h, t.w, t.c);
    const std::size_t plane = t.plane();
    for (std::size_t p = 0; p < plane; ++p) {
        for (int c = 0; c < t.c; ++c) {
            img.pixels[p * t.c + c] = t.data[c * plane + p];
        }
    }
    return img;
}

}  // namespace busdx::nn
