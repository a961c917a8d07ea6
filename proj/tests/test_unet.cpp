#include <doctest.h>

#include <cmath>
#include <random>

#include "busdx/losses.hpp"
#include "busdx/unet.hpp"
#include "synthetic.hpp"

using namespace busdx;

namespace {

ImageTensor random_image(int size, std::uint32_t seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    ImageTensor img(size, size, 3);
    for (auto& v : img.pixels) v = u(rng);
    return img;
}

UNetConfig small_config() {
    UNetConfig c;
    c.depth = 2;
    c.base_filters = 4;
    c.input_size = 16;
    return c;
}

}  // namespace

TEST_CASE("bce and dice closed forms") {
    MaskTensor y(1, 2), p(1, 2);
    y.values = {1, 0};
    p.values = {0.5f, 0.5f};
    CHECK(bce_loss(p, y) == doctest::Approx(std::log(2.0)).epsilon(1e-6));
    MaskTensor y1(1, 1), p1(1, 1);
    y1.values = {1};
    p1.values = {0.25f};
    CHECK(bce_loss(p1, y1) == doctest::Approx(-std::log(0.25)).epsilon(1e-6));
    CHECK(bce_loss(y, y) <= 1e-6);
    CHECK(bce_loss(p, y) >= 0.0);

    MaskTensor a(2, 4), b(2, 4);
    a.values = {1, 1, 1, 1, 0, 0, 0, 0};
    b.values = {1, 1, 0, 0, 0, 0, 0, 0};
    CHECK(dice_coefficient(a, b) == doctest::Approx(5.0 / 7.0));
    CHECK(dice_coefficient(a, b, 0.0) == doctest::Approx(2.0 / 3.0).epsilon(1e-9));
    CHECK(dice_coefficient(a, b) == dice_coefficient(b, a));

    MaskTensor e1(4, 4), e2(4, 4);
    CHECK(dice_coefficient(e1, e2) == 1.0);

    MaskTensor d1(20, 20), d2(20, 20);
    for (int i = 0; i < 100; ++i) {
        d1.values[i] = 1;
        d2.values[399 - i] = 1;
    }
    CHECK(dice_coefficient(d1, d2) == doctest::Approx(1.0 / 201.0));

    MaskTensor full(128, 128);
    for (int i = 0; i < 128 * 64; ++i) full.values[i] = 1;
    CHECK(dice_coefficient(full, full) == doctest::Approx(1.0).epsilon(1e-3));

    CHECK_THROWS(bce_loss(a, y));
    CHECK_THROWS(dice_coefficient(a, y));
}

TEST_CASE("unet layout follows the halving rule") {
    UNetConfig c;
    c.base_filters = 16;
    const UNet net(c);
    const auto layers = net.layers();
    auto find = [&](const std::string& n) {
        for (const auto& l : layers)
            if (l.name == n) return l;
        FAIL("missing layer " << n);
        return UNet::LayerInfo{};
    };
    CHECK(find("enc0.conv_a").out_channels == 16);
    CHECK(find("enc0.conv_b").out_channels == 8);
    CHECK(find("enc3.conv_a").out_channels == 128);
    CHECK(find("enc0.conv_a").height == 128);
    CHECK(find("enc1.conv_a").height == 64);
    CHECK(find("enc2.conv_a").height == 32);
    CHECK(find("enc3.conv_a").height == 16);
    CHECK(find("bottleneck.conv_a").height == 8);
    CHECK(find("bottleneck.conv_a").out_channels == 256);
    CHECK(find("bottleneck.conv_b").out_channels == 128);
    CHECK(find("dec3.up").out_channels == 64);
    CHECK(find("dec3.conv_a").in_channels == 128);
    CHECK(find("dec0.conv_b").out_channels == 8);
    CHECK(find("head").out_channels == 1);
    CHECK(find("head").kernel == 1);

    UNetConfig bad;
    bad.input_size = 100;  // not divisible by 16
    CHECK_THROWS(UNet{bad});
    bad = {};
    bad.base_filters = 15;
    CHECK_THROWS(UNet{bad});
}

TEST_CASE("unet parameter count matches a per-layer tally") {
    // conv params: k*k*in*out + out, transposed 2x2: 4*in*out + out
    auto count = [](int F, int depth) {
        long n = 0, in = 3;
        auto conv = [&](long i, long o, long k) { n += k * k * i * o + o; };
        for (int d = 0; d < depth; ++d) {
            const long f = static_cast<long>(F) << d;
            conv(in, f, 3);
            conv(f, f / 2, 3);
            in = f / 2;
        }
        const long fb = static_cast<long>(F) << depth;
        conv(in, fb, 3);
        conv(fb, fb / 2, 3);
        in = fb / 2;
        for (int d = depth - 1; d >= 0; --d) {
            const long f = static_cast<long>(F) << d;
            conv(in, f / 2, 2);
            conv(f, f, 3);
            conv(f, f / 2, 3);
            in = f / 2;
        }
        conv(in, 1, 1);
        return n;
    };
    UNetConfig c;
    CHECK(static_cast<long>(UNet(c).parameter_count()) == count(64, 4));
    c.base_filters = 16;
    CHECK(static_cast<long>(UNet(c).parameter_count()) == count(16, 4));
}

TEST_CASE("unet forward and gradients match the torch reference") {
    const Container ref = load_container(std::filesystem::path(BUSDX_TEST_DATA) / "unet_reference.busdx");
    UNet net(small_config());
    net.import_parameters(ref.tensors);

    ImageTensor img(16, 16, 3);
    img.pixels = ref.tensor("input").data;
    MaskTensor target(16, 16);
    target.values = ref.tensor("target").data;

    const MaskTensor out = net.predict(img);
    const auto& want = ref.tensor("output").data;
    REQUIRE(out.values.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(out.values[i] == doctest::Approx(want[i]).epsilon(1e-4));

    net.zero_grad();
    const auto stats = net.accumulate_gradients(img, target, 1.0f);
    CHECK(stats.bce == doctest::Approx(ref.tensor("loss").data[0]).epsilon(1e-4));
    for (const auto& p : net.params()) {
        const auto& g = ref.tensor("grad." + p.name).data;
        REQUIRE(g.size() == p.grad.size());
        double scale = 1e-6, worst = 0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            scale = std::max(scale, std::abs(static_cast<double>(g[i])));
            worst = std::max(worst, std::abs(static_cast<double>(g[i]) - p.grad[i]));
        }
        INFO(p.name);
        CHECK(worst / scale < 1e-3);
    }
}

TEST_CASE("prediction shape, range, determinism and checkpoint round trip") {
    UNetConfig c;
    c.base_filters = 8;
    SegmentationCheckpoint ckpt{UNet(c)};
    ckpt.metadata["note"] = "x";
    const ImageTensor img = random_image(128, 3);
    const MaskTensor a = predict_mask(ckpt, img);
    CHECK(a.height == 128);
    CHECK(a.width == 128);
    for (float v : a.values) CHECK((v >= 0.0f && v <= 1.0f));
    CHECK(predict_mask(ckpt, img).values == a.values);

    busdx::testing::TempDir tmp("unet");
    ckpt.save(tmp.path / "seg.busdx");
    const SegmentationCheckpoint back = SegmentationCheckpoint::load(tmp.path / "seg.busdx");
    CHECK(predict_mask(back, img).values == a.values);
    CHECK(back.metadata["note"] == "x");
    CHECK(back.model.config().base_filters == 8);

    CHECK_THROWS(predict_mask(ckpt, random_image(64, 1)));
}

TEST_CASE("training reduces the loss and keeps the best epoch") {
    std::vector<SegSample> train;
    for (int i = 0; i < 4; ++i) {
        const auto sc = busdx::testing::make_case(ClassLabel::Benign, i + 1, 32, 32);
        SegSample s;
        s.id = "s" + std::to_string(i);
        s.image = from_mat(sc.image);
        for (auto& v : s.image.pixels) v /= 255.0f;
        s.mask = mask_from_mat(sc.mask);
        for (auto& v : s.mask.values) v = v > 0 ? 1.0f : 0.0f;
        train.push_back(s);
    }
    UNetConfig c = small_config();
    c.input_size = 32;
    c.base_filters = 8;
    c.epochs = 20;
    c.batch_size = 2;
    c.learning_rate = 1e-3;
    std::vector<SegEpochMetrics> seen;
    SegTrainOptions opts;
    opts.on_epoch = [&](const SegEpochMetrics& m) {
        seen.push_back(m);
        return true;
    };
    const SegmentationCheckpoint ck = train_segmentation(train, {}, c, opts);
    REQUIRE(seen.size() == 20);
    CHECK(seen.back().train_bce < seen.front().train_bce);
    CHECK(ck.history.size() == 20);
    double best = -1;
    for (const auto& h : ck.history) best = std::max(best, h.val_dice);
    CHECK(ck.val_dice == doctest::Approx(best));

    CHECK_THROWS(train_segmentation({}, {}, c));
}

TEST_CASE("selection criterion strings") {
    CHECK(parse_selection("max_val_dice") == SelectionCriterion::MaxValDice);
    CHECK(parse_selection("min_val_bce") == SelectionCriterion::MinValBce);
    CHECK_FALSE(parse_selection("latest").has_value());
}
