#include <doctest.h>

#include <cmath>

#include "busdx/backbone.hpp"
#include "synthetic.hpp"

using namespace busdx;

TEST_CASE("backbone names and scaling conventions") {
    CHECK(parse_backbone("vgg16") == BackboneKind::VGG16);
    CHECK(parse_backbone("densenet121") == BackboneKind::DenseNet121);
    CHECK_FALSE(parse_backbone("inception").has_value());
    CHECK(default_scaling(BackboneKind::VGG16) == InputScaling::Caffe);
    CHECK(default_scaling(BackboneKind::DenseNet121) == InputScaling::Torch);

    ImageTensor px(1, 1, 3);
    px.pixels = {0.2f, 0.4f, 0.6f};  // RGB
    const ImageTensor caffe = apply_input_scaling(px, InputScaling::Caffe);
    CHECK(caffe.pixels[0] == doctest::Approx(0.6 * 255 - 103.939));  // B
    CHECK(caffe.pixels[1] == doctest::Approx(0.4 * 255 - 116.779));
    CHECK(caffe.pixels[2] == doctest::Approx(0.2 * 255 - 123.68));
    const ImageTensor torch = apply_input_scaling(px, InputScaling::Torch);
    CHECK(torch.pixels[0] == doctest::Approx((0.2 - 0.485) / 0.229));
    CHECK(torch.pixels[1] == doctest::Approx((0.4 - 0.456) / 0.224));
    CHECK(torch.pixels[2] == doctest::Approx((0.6 - 0.406) / 0.225));
}

TEST_CASE("feature dimensions at 128x128") {
    const struct {
        BackboneKind kind;
        std::size_t dim;
    } cases[] = {{BackboneKind::VGG16, 8192},
                 {BackboneKind::VGG19, 8192},
                 {BackboneKind::ResNet50, 32768},
                 {BackboneKind::DenseNet121, 16384}};
    ImageTensor img(128, 128, 3);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>((i * 37) % 101) / 50.0f - 1;
    for (const auto& c : cases) {
        const Backbone b(c.kind, make_initialized_backbone_weights(c.kind, 1));
        CHECK(b.output_shape(128, 128).flat_size() == c.dim);
        const auto f = b.extract_features(img);
        CHECK(f.size() == c.dim);
        bool finite = true;
        for (float v : f) finite = finite && std::isfinite(v);
        CHECK(finite);
    }
}

TEST_CASE("weights loading, validation and digests") {
    busdx::testing::TempDir tmp("bb");
    try {
        Backbone::load(BackboneKind::VGG16, tmp.path);
        FAIL("expected an error");
    } catch (const std::exception& e) {
        const std::string msg = e.what();
        CHECK(msg.find("vgg16") != std::string::npos);
        CHECK(msg.find(backbone_weights_path(tmp.path, BackboneKind::VGG16).string()) != std::string::npos);
    }

    const Container w = make_initialized_backbone_weights(BackboneKind::VGG16, 3);
    save_container(backbone_weights_path(tmp.path, BackboneKind::VGG16), w);
    const Backbone a = Backbone::load(BackboneKind::VGG16, tmp.path);
    const Backbone b(BackboneKind::VGG16, w);
    CHECK(a.weights_digest() == b.weights_digest());
    const Backbone other(BackboneKind::VGG16, make_initialized_backbone_weights(BackboneKind::VGG16, 4));
    CHECK(other.weights_digest() != a.weights_digest());

    Container broken = w;
    broken.tensors.at("features.0.weight").shape = {64, 3, 3};
    CHECK_THROWS(Backbone(BackboneKind::VGG16, broken));
    Container missing = w;
    missing.tensors.erase("features.28.bias");
    CHECK_THROWS(Backbone(BackboneKind::VGG16, missing));
    // weights declared for another architecture
    CHECK_THROWS(Backbone(BackboneKind::VGG19, w));
}

TEST_CASE("feature extraction is deterministic") {
    const Backbone b(BackboneKind::ResNet50, make_initialized_backbone_weights(BackboneKind::ResNet50, 2));
    ImageTensor img(64, 64, 3);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = std::sin(static_cast<float>(i));
    CHECK(b.extract_features(img) == b.extract_features(img));
}
