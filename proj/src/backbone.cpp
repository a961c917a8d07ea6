#include "busdx/backbone.hpp"

#include <array>
#include <cmath>
#include <random>
#include <stdexcept>

#include "busdx/nn/convert.hpp"
#include "busdx/nn/ops.hpp"

namespace busdx {

using nn::ConvGeometry;
using nn::Tensor;

std::string_view to_string(BackboneKind kind) {
    switch (kind) {
        case BackboneKind::VGG16: return "vgg16";
        case BackboneKind::VGG19: return "vgg19";
        case BackboneKind::ResNet50: return "resnet50";
        case BackboneKind::DenseNet121: return "densenet121";
    }
    return "unknown";
}

std::optional<BackboneKind> parse_backbone(std::string_view text) {
    for (auto k : {BackboneKind::VGG16, BackboneKind::VGG19, BackboneKind::ResNet50, BackboneKind::DenseNet121}) {
        if (text == to_string(k)) {
            return k;
        }
    }
    return std::nullopt;
}

std::string_view to_string(InputScaling s) { return s == InputScaling::Torch ? "torch" : "caffe"; }

std::optional<InputScaling> parse_scaling(std::string_view text) {
    if (text == "torch") return InputScaling::Torch;
    if (text == "caffe") return InputScaling::Caffe;
    return std::nullopt;
}

InputScaling default_scaling(BackboneKind kind) {
    return kind == BackboneKind::DenseNet121 ? InputScaling::Torch : InputScaling::Caffe;
}

ImageTensor apply_input_scaling(const ImageTensor& img, InputScaling scaling) {
    if (img.channels != 3) {
        throw std::invalid_argument("apply_input_scaling: expected a 3-channel image");
    }
    ImageTensor out(img.height, img.width, 3);
    constexpr std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
    constexpr std::array<float, 3> stdev{0.229f, 0.224f, 0.225f};
    constexpr std::array<float, 3> bgr_mean{103.939f, 116.779f, 123.68f};
    const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
    for (std::size_t p = 0; p < n; ++p) {
        const float* src = img.pixels.data() + 3 * p;
        float* dst = out.pixels.data() + 3 * p;
        if (scaling == InputScaling::Torch) {
            for (int c = 0; c < 3; ++c) {
                dst[c] = (src[c] - mean[c]) / stdev[c];
            }
        } else {
            for (int c = 0; c < 3; ++c) {
                dst[c] = src[2 - c] * 255.0f - bgr_mean[c];
            }
        }
    }
    return out;
}

namespace {

enum class Role { ConvWeight, ConvBias, BnGamma, BnBeta, BnMean, BnVar };

struct ParamSpec {
    std::string name;
    std::vector<std::int64_t> shape;
    Role role;
};

constexpr int kVgg16[] = {64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0};
constexpr int kVgg19[] = {64, 64, 0, 128, 128, 0, 256, 256, 256, 256, 0,
                          512, 512, 512, 512, 0, 512, 512, 512, 512, 0};

std::span<const int> vgg_plan(BackboneKind kind) {
    return kind == BackboneKind::VGG16 ? std::span<const int>(kVgg16) : std::span<const int>(kVgg19);
}

constexpr std::array<int, 4> kResNetBlocks{3, 4, 6, 3};
constexpr std::array<int, 4> kDenseBlocks{6, 12, 24, 16};
constexpr int kGrowth = 32;
constexpr int kBnSize = 4;
constexpr float kBnEps = 1e-5f;

void add_conv(std::vector<ParamSpec>& out, const std::string& name, int cout, int cin, int k, bool bias) {
    out.push_back({name + ".weight", {cout, cin, k, k}, Role::ConvWeight});
    if (bias) {
        out.push_back({name + ".bias", {cout}, Role::ConvBias});
    }
}

void add_bn(std::vector<ParamSpec>& out, const std::string& name, int c) {
    out.push_back({name + ".weight", {c}, Role::BnGamma});
    out.push_back({name + ".bias", {c}, Role::BnBeta});
    out.push_back({name + ".running_mean", {c}, Role::BnMean});
    out.push_back({name + ".running_var", {c}, Role::BnVar});
}

std::vector<ParamSpec> layout(BackboneKind kind) {
    std::vector<ParamSpec> out;
    switch (kind) {
        case BackboneKind::VGG16:
        case BackboneKind::VGG19: {
            int idx = 0, in = 3;
            for (int v : vgg_plan(kind)) {
                if (v == 0) {
                    idx += 1;
                } else {
                    add_conv(out, "features." + std::to_string(idx), v, in, 3, true);
                    in = v;
                    idx += 2;
                }
            }
            break;
        }
        case BackboneKind::ResNet50: {
            add_conv(out, "conv1", 64, 3, 7, false);
            add_bn(out, "bn1", 64);
            int in = 64;
            for (int l = 0; l < 4; ++l) {
                const int planes = 64 << l;
                for (int b = 0; b < kResNetBlocks[l]; ++b) {
                    const std::string p = "layer" + std::to_string(l + 1) + "." + std::to_string(b);
                    add_conv(out, p + ".conv1", planes, in, 1, false);
                    add_bn(out, p + ".bn1", planes);
                    add_conv(out, p + ".conv2", planes, planes, 3, false);
                    add_bn(out, p + ".bn2", planes);
                    add_conv(out, p + ".conv3", planes * 4, planes, 1, false);
                    add_bn(out, p + ".bn3", planes * 4);
                    if (b == 0) {
                        add_conv(out, p + ".downsample.0", planes * 4, in, 1, false);
                        add_bn(out, p + ".downsample.1", planes * 4);
                    }
                    in = planes * 4;
                }
            }
            break;
        }
        case BackboneKind::DenseNet121: {
            add_conv(out, "features.conv0", 64, 3, 7, false);
            add_bn(out, "features.norm0", 64);
            int c = 64;
            for (int blk = 0; blk < 4; ++blk) {
                for (int j = 0; j < kDenseBlocks[blk]; ++j) {
                    const std::string p =
                        "features.denseblock" + std::to_string(blk + 1) + ".denselayer" + std::to_string(j + 1);
                    add_bn(out, p + ".norm1", c);
                    add_conv(out, p + ".conv1", kBnSize * kGrowth, c, 1, false);
                    add_bn(out, p + ".norm2", kBnSize * kGrowth);
                    add_conv(out, p + ".conv2", kGrowth, kBnSize * kGrowth, 3, false);
                    c += kGrowth;
                }
                if (blk < 3) {
                    const std::string p = "features.transition" + std::to_string(blk + 1);
                    add_bn(out, p + ".norm", c);
                    add_conv(out, p + ".conv", c / 2, c, 1, false);
                    c /= 2;
                }
            }
            add_bn(out, "features.norm5", c);
            break;
        }
    }
    return out;
}

}  // namespace

std::filesystem::path backbone_weights_path(const std::filesystem::path& weights_dir, BackboneKind kind) {
    return weights_dir / (std::string(to_string(kind)) + ".busdx");
}

Container make_initialized_backbone_weights(BackboneKind kind, std::uint64_t seed) {
    Container c;
    c.meta["kind"] = "backbone";
    c.meta["backbone"] = std::string(to_string(kind));
    // he_uniform assumes unit-variance inputs
    c.meta["input_scaling"] = std::string(to_string(InputScaling::Torch));
    c.meta["source"] = "he_uniform init, seed " + std::to_string(seed);
    std::mt19937_64 rng(seed);
    for (const auto& spec : layout(kind)) {
        TensorBlob blob;
        blob.shape = spec.shape;
        std::size_t n = 1;
        for (auto d : spec.shape) {
            n *= static_cast<std::size_t>(d);
        }
        blob.data.assign(n, 0.0f);
        switch (spec.role) {
            case Role::ConvWeight: {
                const double fan_in = static_cast<double>(spec.shape[1] * spec.shape[2] * spec.shape[3]);
                const auto limit = static_cast<float>(std::sqrt(6.0 / fan_in));
                std::uniform_real_distribution<float> u(-limit, limit);
                for (float& v : blob.data) {
                    v = u(rng);
                }
                break;
            }
            case Role::BnGamma:
            case Role::BnVar:
                std::fill(blob.data.begin(), blob.data.end(), 1.0f);
                break;
            default:
                break;
        }
        c.tensors.emplace(spec.name, std::move(blob));
    }
    return c;
}

Backbone::Backbone(BackboneKind kind, Container weights) : kind_(kind), weights_(std::move(weights)) {
    const std::string declared = weights_.meta.value("backbone", std::string(to_string(kind)));
    if (declared != to_string(kind)) {
        throw std::runtime_error("weights are for backbone '" + declared + "', expected '" +
                                 std::string(to_string(kind)) + "'");
    }
    const auto scaling = parse_scaling(weights_.meta.value("input_scaling", std::string(to_string(default_scaling(kind)))));
    if (!scaling) {
        throw std::runtime_error("unknown input_scaling in backbone weights");
    }
    scaling_ = *scaling;
    for (const auto& spec : layout(kind)) {
        const TensorBlob& blob = weights_.tensor(spec.name);
        if (blob.shape != spec.shape) {
            throw std::runtime_error("backbone tensor " + spec.name + " has an unexpected shape");
        }
    }
    digest_ = tensors_digest(weights_.tensors);
}

Backbone Backbone::load(BackboneKind kind, const std::filesystem::path& weights_dir) {
    const auto path = backbone_weights_path(weights_dir, kind);
    if (!std::filesystem::exists(path)) {
        throw std::runtime_error("missing pretrained weights for " + std::string(to_string(kind)) +
                                 ": expected " + path.string());
    }
    return Backbone(kind, load_container(path));
}

FeatureShape Backbone::output_shape(int input_height, int input_width) const {
    switch (kind_) {
        case BackboneKind::VGG16:
        case BackboneKind::VGG19:
            return {512, input_height / 32, input_width / 32};
        case BackboneKind::ResNet50: {
            auto s = [](int x) {
                x = (x + 2 * 3 - 7) / 2 + 1;  // conv1
                x = (x + 2 - 3) / 2 + 1;      // maxpool
                for (int i = 0; i < 3; ++i) {
                    x = (x + 2 - 3) / 2 + 1;  // stride-2 3x3 in layers 2..4
                }
                return x;
            };
            return {2048, s(input_height), s(input_width)};
        }
        case BackboneKind::DenseNet121: {
            auto s = [](int x) {
                x = (x + 2 * 3 - 7) / 2 + 1;
                x = (x + 2 - 3) / 2 + 1;
                return x / 8;  // three 2x2 average-pool transitions
            };
            return {1024, s(input_height), s(input_width)};
        }
    }
    return {};
}

std::vector<float> Backbone::extract_features(const ImageTensor& scaled) const {
    if (scaled.channels != 3) {
        throw std::invalid_argument("extract_features: expected a 3-channel image");
    }
    auto conv = [&](const Tensor& x, const std::string& name, const ConvGeometry& g, bool bias) {
        const TensorBlob& wt = w(name + ".weight");
        std::span<const float> b;
        if (bias) {
            b = w(name + ".bias").data;
        }
        return nn::conv2d(x, wt.data, b, static_cast<int>(wt.shape[0]), g);
    };
    auto bn = [&](Tensor& x, const std::string& name) {
        nn::batchnorm_inplace(x, w(name + ".weight").data, w(name + ".bias").data, w(name + ".running_mean").data,
                              w(name + ".running_var").data, kBnEps);
    };

    Tensor x = nn::to_chw(scaled);
    switch (kind_) {
        case BackboneKind::VGG16:
        case BackboneKind::VGG19: {
            int idx = 0;
            for (int v : vgg_plan(kind_)) {
                if (v == 0) {
                    x = nn::maxpool2x2(x);
                    idx += 1;
                } else {
                    x = conv(x, "features." + std::to_string(idx), {3, 1, 1}, true);
                    nn::relu_inplace(x);
                    idx += 2;
                }
            }
            break;
        }
        case BackboneKind::ResNet50: {
            x = conv(x, "conv1", {7, 2, 3}, false);
            bn(x, "bn1");
            nn::relu_inplace(x);
            x = nn::maxpool(x, 3, 2, 1);
            for (int l = 0; l < 4; ++l) {
                for (int b = 0; b < kResNetBlocks[l]; ++b) {
                    const std::string p = "layer" + std::to_string(l + 1) + "." + std::to_string(b);
                    const int stride = (b == 0 && l > 0) ? 2 : 1;
                    Tensor y = conv(x, p + ".conv1", {1, 1, 0}, false);
                    bn(y, p + ".bn1");
                    nn::relu_inplace(y);
                    y = conv(y, p + ".conv2", {3, stride, 1}, false);
                    bn(y, p + ".bn2");
                    nn::relu_inplace(y);
                    y = conv(y, p + ".conv3", {1, 1, 0}, false);
                    bn(y, p + ".bn3");
                    if (b == 0) {
                        Tensor id = conv(x, p + ".downsample.0", {1, stride, 0}, false);
                        bn(id, p + ".downsample.1");
                        x = std::move(id);
                    }
                    for (std::size_t i = 0; i < y.data.size(); ++i) {
                        y.data[i] += x.data[i];
                    }
                    nn::relu_inplace(y);
                    x = std::move(y);
                }
            }
            break;
        }
        case BackboneKind::DenseNet121: {
            x = conv(x, "features.conv0", {7, 2, 3}, false);
            bn(x, "features.norm0");
            nn::relu_inplace(x);
            x = nn::maxpool(x, 3, 2, 1);
            for (int blk = 0; blk < 4; ++blk) {
                for (int j = 0; j < kDenseBlocks[blk]; ++j) {
                    const std::string p =
                        "features.denseblock" + std::to_string(blk + 1) + ".denselayer" + std::to_string(j + 1);
                    Tensor y = x;
                    bn(y, p + ".norm1");
                    nn::relu_inplace(y);
                    y = conv(y, p + ".conv1", {1, 1, 0}, false);
                    bn(y, p + ".norm2");
                    nn::relu_inplace(y);
                    y = conv(y, p + ".conv2", {3, 1, 1}, false);
                    // Channel-major layout: concatenation appends planes.
                    x.data.insert(x.data.end(), y.data.begin(), y.data.end());
                    x.c += y.c;
                }
                if (blk < 3) {
                    const std::string p = "features.transition" + std::to_string(blk + 1);
                    bn(x, p + ".norm");
                    nn::relu_inplace(x);
                    x = conv(x, p + ".conv", {1, 1, 0}, false);
                    x = nn::avgpool(x, 2);
                }
            }
            bn(x, "features.norm5");
            nn::relu_inplace(x);
            break;
        }
    }
    return std::move(x.data);
}

}  // namespace busdx
