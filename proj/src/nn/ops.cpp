#include "busdx/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <cblas.h>

namespace busdx::nn {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, const float* b,
          float beta, float* c) {
    const int lda = trans_a ? m : k;
    const int ldb = trans_b ? k : n;
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m, n, k,
                alpha, a, lda, b, ldb, beta, c, n);
}

namespace {

bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.pad == 0; }

// col rows: (ci, ky, kx); columns: output pixels.
void im2col(const Tensor& x, const ConvGeometry& g, int oh, int ow, std::vector<float>& col) {
    const int k = g.kernel;
    const std::size_t n_out = static_cast<std::size_t>(oh) * ow;
    col.assign(static_cast<std::size_t>(x.c) * k * k * n_out, 0.0f);
    for (int ci = 0; ci < x.c; ++ci) {
        const float* src = x.channel(ci);
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                float* dst = col.data() + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * n_out;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= x.h) {
                        continue;
                    }
                    float* drow = dst + static_cast<std::size_t>(oy) * ow;
                    const float* srow = src + static_cast<std::size_t>(iy) * x.w;
                    if (g.stride == 1) {
                        const int ox0 = std::max(0, g.pad - kx);
                        const int ox1 = std::min(ow, x.w + g.pad - kx);
                        for (int ox = ox0; ox < ox1; ++ox) {
                            drow[ox] = srow[ox - g.pad + kx];
                        }
                    } else {
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * g.stride - g.pad + kx;
                            if (ix >= 0 && ix < x.w) {
                                drow[ox] = srow[ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

void col2im(const std::vector<float>& col, const ConvGeometry& g, int oh, int ow, Tensor& dx) {
    const int k = g.kernel;
    const std::size_t n_out = static_cast<std::size_t>(oh) * ow;
    for (int ci = 0; ci < dx.c; ++ci) {
        float* dst = dx.channel(ci);
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const float* src = col.data() + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * n_out;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= dx.h) {
                        continue;
                    }
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (ix >= 0 && ix < dx.w) {
                            dst[static_cast<std::size_t>(iy) * dx.w + ix] += src[static_cast<std::size_t>(oy) * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, std::span<const float> weight, std::span<const float> bias, int out_channels,
              const ConvGeometry& g) {
    const int oh = g.out_size(x.h), ow = g.out_size(x.w);
    const int kdim = x.c * g.kernel * g.kernel;
    if (weight.size() != static_cast<std::size_t>(out_channels) * kdim) {
        throw std::invalid_argument("conv2d: weight size does not match geometry");
    }
    Tensor y(out_channels, oh, ow);
    const int n = oh * ow;
    if (is_pointwise(g)) {
        gemm(false, false, out_channels, n, kdim, 1.0f, weight.data(), x.data.data(), 0.0f, y.data.data());
    } else {
        std::vector<float> col;
        im2col(x, g, oh, ow, col);
        gemm(false, false, out_channels, n, kdim, 1.0f, weight.data(), col.data(), 0.0f, y.data.data());
    }
    if (!bias.empty()) {
        for (int co = 0; co < out_channels; ++co) {
            float* p = y.channel(co);
            const float b = bias[co];
            for (int i = 0; i < n; ++i) {
                p[i] += b;
            }
        }
    }
    return y;
}

void conv2d_backward(const Tensor& x, const Tensor& dy, std::span<const float> weight, const ConvGeometry& g,
                     Tensor* dx, std::span<float> dweight, std::span<float> dbias) {
    const int oh = dy.h, ow = dy.w, n = oh * ow;
    const int kdim = x.c * g.kernel * g.kernel;
    const int co = dy.c;
    if (!dbias.empty()) {
        for (int o = 0; o < co; ++o) {
            const float* p = dy.channel(o);
            double s = 0.0;
            for (int i = 0; i < n; ++i) {
                s += p[i];
            }
            dbias[o] += static_cast<float>(s);
        }
    }
    if (is_pointwise(g)) {
        gemm(false, true, co, kdim, n, 1.0f, dy.data.data(), x.data.data(), 1.0f, dweight.data());
        if (dx) {
            *dx = Tensor(x.c, x.h, x.w);
            gemm(true, false, kdim, n, co, 1.0f, weight.data(), dy.data.data(), 0.0f, dx->data.data());
        }
        return;
    }
    std::vector<float> col;
    im2col(x, g, oh, ow, col);
    gemm(false, true, co, kdim, n, 1.0f, dy.data.data(), col.data(), 1.0f, dweight.data());
    if (dx) {
        gemm(true, false, kdim, n, co, 1.0f, weight.data(), dy.data.data(), 0.0f, col.data());
        *dx = Tensor(x.c, x.h, x.w);
        col2im(col, g, oh, ow, *dx);
    }
}

Tensor conv_transpose2x2(const Tensor& x, std::span<const float> weight, std::span<const float> bias,
                         int out_channels) {
    const int n = x.h * x.w;
    const int rows = out_channels * 4;
    if (weight.size() != static_cast<std::size_t>(x.c) * rows) {
        throw std::invalid_argument("conv_transpose2x2: weight size does not match geometry");
    }
    std::vector<float> cols(static_cast<std::size_t>(rows) * n);
    gemm(true, false, rows, n, x.c, 1.0f, weight.data(), x.data.data(), 0.0f, cols.data());
    Tensor y(out_channels, x.h * 2, x.w * 2);
    for (int o = 0; o < out_channels; ++o) {
        const float b = bias.empty() ? 0.0f : bias[o];
        float* dst = y.channel(o);
        for (int ky = 0; ky < 2; ++ky) {
            for (int kx = 0; kx < 2; ++kx) {
                const float* src = cols.data() + (static_cast<std::size_t>(o) * 4 + ky * 2 + kx) * n;
                for (int iy = 0; iy < x.h; ++iy) {
                    float* drow = dst + static_cast<std::size_t>(2 * iy + ky) * y.w + kx;
                    const float* srow = src + static_cast<std::size_t>(iy) * x.w;
                    for (int ix = 0; ix < x.w; ++ix) {
                        drow[2 * ix] = srow[ix] + b;
                    }
                }
            }
        }
    }
    return y;
}

void conv_transpose2x2_backward(const Tensor& x, const Tensor& dy, std::span<const float> weight, Tensor* dx,
                                std::span<float> dweight, std::span<float> dbias) {
    const int n = x.h * x.w;
    const int out_channels = dy.c;
    const int rows = out_channels * 4;
    std::vector<float> dcols(static_cast<std::size_t>(rows) * n);
    for (int o = 0; o < out_channels; ++o) {
        const float* src = dy.channel(o);
        double bsum = 0.0;
        for (int ky = 0; ky < 2; ++ky) {
            for (int kx = 0; kx < 2; ++kx) {
                float* dst = dcols.data() + (static_cast<std::size_t>(o) * 4 + ky * 2 + kx) * n;
                for (int iy = 0; iy < x.h; ++iy) {
                    const float* srow = src + static_cast<std::size_t>(2 * iy + ky) * dy.w + kx;
                    for (int ix = 0; ix < x.w; ++ix) {
                        dst[static_cast<std::size_t>(iy) * x.w + ix] = srow[2 * ix];
                        bsum += srow[2 * ix];
                    }
                }
            }
        }
        if (!dbias.empty()) {
            dbias[o] += static_cast<float>(bsum);
        }
    }
    // weight is [in][rows]: dW += x * dcols^T
    gemm(false, true, x.c, rows, n, 1.0f, x.data.data(), dcols.data(), 1.0f, dweight.data());
    if (dx) {
        *dx = Tensor(x.c, x.h, x.w);
        gemm(false, false, x.c, n, rows, 1.0f, weight.data(), dcols.data(), 0.0f, dx->data.data());
    }
}

Tensor maxpool2x2(const Tensor& x, std::vector<std::uint32_t>* argmax) {
    const int oh = x.h / 2, ow = x.w / 2;
    Tensor y(x.c, oh, ow);
    if (argmax) {
        argmax->assign(y.size(), 0);
    }
    for (int c = 0; c < x.c; ++c) {
        const float* src = x.channel(c);
        float* dst = y.channel(c);
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                std::size_t best = static_cast<std::size_t>(2 * oy) * x.w + 2 * ox;
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        const std::size_t idx = static_cast<std::size_t>(2 * oy + dy) * x.w + 2 * ox + dx;
                        if (src[idx] > src[best]) {
                            best = idx;
                        }
                    }
                }
                const std::size_t o = static_cast<std::size_t>(oy) * ow + ox;
                dst[o] = src[best];
                if (argmax) {
                    (*argmax)[c * y.plane() + o] = static_cast<std::uint32_t>(c * x.plane() + best);
                }
            }
        }
    }
    return y;
}

Tensor maxpool2x2_backward(const Tensor& dy, const std::vector<std::uint32_t>& argmax, int c, int h, int w) {
    Tensor dx(c, h, w);
    for (std::size_t i = 0; i < dy.data.size(); ++i) {
        dx.data[argmax[i]] += dy.data[i];
    }
    return dx;
}

Tensor maxpool(const Tensor& x, int kernel, int stride, int pad) {
    const int oh = (x.h + 2 * pad - kernel) / stride + 1;
    const int ow = (x.w + 2 * pad - kernel) / stride + 1;
    Tensor y(x.c, oh, ow);
    for (int c = 0; c < x.c; ++c) {
        const float* src = x.channel(c);
        float* dst = y.channel(c);
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                float best = -std::numeric_limits<float>::infinity();
                for (int ky = 0; ky < kernel; ++ky) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= x.h) {
                        continue;
                    }
                    for (int kx = 0; kx < kernel; ++kx) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < x.w) {
                            best = std::max(best, src[static_cast<std::size_t>(iy) * x.w + ix]);
                        }
                    }
                }
                dst[static_cast<std::size_t>(oy) * ow + ox] = best;
            }
        }
    }
    return y;
}

Tensor avgpool(const Tensor& x, int kernel) {
    const int oh = x.h / kernel, ow = x.w / kernel;
    Tensor y(x.c, oh, ow);
    const float inv = 1.0f / static_cast<float>(kernel * kernel);
    for (int c = 0; c < x.c; ++c) {
        const float* src = x.channel(c);
        float* dst = y.channel(c);
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                float s = 0.0f;
                for (int ky = 0; ky < kernel; ++ky) {
                    for (int kx = 0; kx < kernel; ++kx) {
                        s += src[static_cast<std::size_t>(oy * kernel + ky) * x.w + ox * kernel + kx];
                    }
                }
                dst[static_cast<std::size_t>(oy) * ow + ox] = s * inv;
            }
        }
    }
    return y;
}

void relu_inplace(Tensor& x) {
    for (float& v : x.data) {
        v = v > 0.0f ? v : 0.0f;
    }
}

void relu_backward_inplace(Tensor& dy, const Tensor& y) {
    for (std::size_t i = 0; i < dy.data.size(); ++i) {
        if (!(y.data[i] > 0.0f)) {
            dy.data[i] = 0.0f;
        }
    }
}

void batchnorm_inplace(Tensor& x, std::span<const float> gamma, std::span<const float> beta,
                       std::span<const float> mean, std::span<const float> var, float eps) {
    for (int c = 0; c < x.c; ++c) {
        const float scale = gamma[c] / std::sqrt(var[c] + eps);
        const float shift = beta[c] - mean[c] * scale;
        float* p = x.channel(c);
        for (std::size_t i = 0; i < x.plane(); ++i) {
            p[i] = p[i] * scale + shift;
        }
    }
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.h != b.h || a.w != b.w) {
        throw std::invalid_argument("concat_channels: spatial sizes differ");
    }
    Tensor y(a.c + b.c, a.h, a.w);
    std::copy(a.data.begin(), a.data.end(), y.data.begin());
    std::copy(b.data.begin(), b.data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
    return y;
}

}  // namespace busdx::nn
