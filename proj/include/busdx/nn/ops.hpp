#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace busdx::nn {

/// Channel-major (C x H x W) activation tensor for a single sample.
struct Tensor {
    int c = 0;
    int h = 0;
    int w = 0;
    std::vector<float> data;

    Tensor() = default;
    Tensor(int channels, int height, int width, float fill = 0.0f)
        : c(channels), h(height), w(width),
          data(static_cast<std::size_t>(channels) * height * width, fill) {}

    [[nodiscard]] std::size_t size() const { return data.size(); }
    [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    float* channel(int ch) { return data.data() + ch * plane(); }
    const float* channel(int ch) const { return data.data() + ch * plane(); }
};

/// C = alpha * op(A) * op(B) + beta * C, row-major.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, const float* b,
          float beta, float* c);

struct ConvGeometry {
    int kernel = 3;
    int stride = 1;
    int pad = 1;

    [[nodiscard]] int out_size(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
};

/// weight layout: [out][in][k][k]; bias may be empty.
Tensor conv2d(const Tensor& x, std::span<const float> weight, std::span<const float> bias, int out_channels,
              const ConvGeometry& g);

/// Accumulates into dweight/dbias; writes dx when non-null.
void conv2d_backward(const Tensor& x, const Tensor& dy, std::span<const float> weight, const ConvGeometry& g,
                     Tensor* dx, std::span<float> dweight, std::span<float> dbias);

/// 2x2 kernel, stride 2 transposed convolution. weight layout: [in][out][2][2].
Tensor conv_transpose2x2(const Tensor& x, std::span<const float> weight, std::span<const float> bias,
                         int out_channels);
void conv_transpose2x2_backward(const Tensor& x, const Tensor& dy, std::span<const float> weight, Tensor* dx,
                                std::span<float> dweight, std::span<float> dbias);

/// 2x2 stride-2 max pooling; argmax holds the flat input index of each output.
Tensor maxpool2x2(const Tensor& x, std::vector<std::uint32_t>* argmax = nullptr);
Tensor maxpool2x2_backward(const Tensor& dy, const std::vector<std::uint32_t>& argmax, int c, int h, int w);

/// General max pooling with implicit -inf padding (forward only).
Tensor maxpool(const Tensor& x, int kernel, int stride, int pad);
/// Non-overlapping average pooling (forward only).
Tensor avgpool(const Tensor& x, int kernel);

void relu_inplace(Tensor& x);
/// dy *= (y > 0), where y is the ReLU output.
void relu_backward_inplace(Tensor& dy, const Tensor& y);

/// Inference-mode batch normalization: y = (x - mean) / sqrt(var + eps) * gamma + beta.
void batchnorm_inplace(Tensor& x, std::span<const float> gamma, std::span<const float> beta,
                       std::span<const float> mean, std::span<const float> var, float eps);

Tensor concat_channels(const Tensor& a, const Tensor& b);

}  // namespace busdx::nn
