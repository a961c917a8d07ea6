#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "busdx/container.hpp"
#include "busdx/image.hpp"

namespace busdx {

enum class BackboneKind { VGG16, VGG19, ResNet50, DenseNet121 };

std::string_view to_string(BackboneKind kind);
std::optional<BackboneKind> parse_backbone(std::string_view text);

/// ImageNet input conventions.
///   torch: x in [0,1], (x - mean) / std per RGB channel.
///   caffe: x * 255, RGB -> BGR, minus the BGR channel means.
enum class InputScaling { Torch, Caffe };

std::string_view to_string(InputScaling s);
std::optional<InputScaling> parse_scaling(std::string_view text);
/// Keras preprocessing convention for each backbone family.
InputScaling default_scaling(BackboneKind kind);

/// Applies the scaling convention to an RGB image in [0,1].
ImageTensor apply_input_scaling(const ImageTensor& img, InputScaling scaling);

struct FeatureShape {
    int channels = 0;
    int height = 0;
    int width = 0;

    [[nodiscard]] std::size_t flat_size() const {
        return static_cast<std::size_t>(channels) * height * width;
    }
};

/// Convolutional feature stages of an ImageNet classifier, frozen. Parameter
/// names follow the torchvision state_dict layout, so exported torchvision
/// weights load without renaming.
class Backbone {
public:
    Backbone(BackboneKind kind, Container weights);

    /// Loads `<dir>/<name>.busdx`; throws naming the expected path when absent.
    static Backbone load(BackboneKind kind, const std::filesystem::path& weights_dir);

    [[nodiscard]] BackboneKind kind() const { return kind_; }
    [[nodiscard]] InputScaling scaling() const { return scaling_; }
    [[nodiscard]] const std::string& weights_digest() const { return digest_; }

    [[nodiscard]] FeatureShape output_shape(int input_height, int input_width) const;

    /// Forward pass through the convolutional stages of an already-scaled
    /// image; the final feature map is flattened channel-major.
    [[nodiscard]] std::vector<float> extract_features(const ImageTensor& scaled) const;

private:
    [[nodiscard]] const TensorBlob& w(const std::string& name) const { return weights_.tensor(name); }

    BackboneKind kind_;
    InputScaling scaling_;
    Container weights_;
    std::string digest_;
};

std::filesystem::path backbone_weights_path(const std::filesystem::path& weights_dir, BackboneKind kind);

/// Weight container with the right names and shapes, filled with seeded
/// He-uniform convolutions and identity batch-norm statistics. Used when no
/// ImageNet export is available (tests, offline smoke runs).
Container make_initialized_backbone_weights(BackboneKind kind, std::uint64_t seed);

}  // namespace busdx
