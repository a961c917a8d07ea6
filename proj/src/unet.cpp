#include "busdx/unet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "busdx/losses.hpp"
#include "busdx/nn/convert.hpp"

namespace busdx {

using nn::ConvGeometry;
using nn::Tensor;

std::string to_string(SelectionCriterion c) {
    return c == SelectionCriterion::MaxValDice ? "max_val_dice" : "min_val_bce";
}

std::optional<SelectionCriterion> parse_selection(const std::string& text) {
    if (text == "max_val_dice") return SelectionCriterion::MaxValDice;
    if (text == "min_val_bce") return SelectionCriterion::MinValBce;
    return std::nullopt;
}

void UNetConfig::validate() const {
    if (depth < 1) {
        throw std::invalid_argument("U-Net depth must be >= 1");
    }
    if (input_size < 1 || input_size % (1 << depth) != 0) {
        throw std::invalid_argument("U-Net input size " + std::to_string(input_size) + " is not divisible by 2^" +
                                    std::to_string(depth));
    }
    if (base_filters < 2 || base_filters % 2 != 0) {
        throw std::invalid_argument("U-Net base filters must be even and >= 2");
    }
    if (input_channels < 1) {
        throw std::invalid_argument("U-Net needs at least one input channel");
    }
    if (!(learning_rate > 0.0) || epochs < 1 || batch_size < 1) {
        throw std::invalid_argument("U-Net training needs learning_rate > 0, epochs >= 1, batch_size >= 1");
    }
}

nlohmann::json UNetConfig::to_json() const {
    return {{"input_size", input_size}, {"input_channels", input_channels}, {"depth", depth},
            {"base_filters", base_filters}, {"learning_rate", learning_rate}, {"epochs", epochs},
            {"batch_size", batch_size}, {"seed", seed}, {"selection", to_string(selection)},
            {"kernel_init", "he_uniform"}, {"activation", "relu"}, {"padding", "same"},
            {"second_conv_halving", true}};
}

UNetConfig UNetConfig::from_json(const nlohmann::json& j) {
    UNetConfig c;
    c.input_size = j.at("input_size").get<int>();
    c.input_channels = j.at("input_channels").get<int>();
    c.depth = j.at("depth").get<int>();
    c.base_filters = j.at("base_filters").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    const auto sel = parse_selection(j.at("selection").get<std::string>());
    if (!sel) {
        throw std::runtime_error("unknown selection criterion in U-Net config");
    }
    c.selection = *sel;
    return c;
}

struct UNet::Trace {
    Tensor input;
    std::vector<Tensor> enc_a, enc_b;  // post-ReLU; enc_b is the skip tensor
    std::vector<std::vector<std::uint32_t>> pool_idx;
    std::vector<Tensor> pooled;
    Tensor bott_a, bott_b;
    std::vector<Tensor> up_in, dec_in, dec_a, dec_b;
};

UNet::UNet(const UNetConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.seed);
    const int F = cfg_.base_filters;
    int in = cfg_.input_channels;
    for (int i = 0; i < cfg_.depth; ++i) {
        const int fi = F << i;
        enc_a_.push_back(add_conv("enc" + std::to_string(i) + ".conv_a", in, fi, 3, false, rng));
        enc_b_.push_back(add_conv("enc" + std::to_string(i) + ".conv_b", fi, fi / 2, 3, false, rng));
        in = fi / 2;
    }
    const int fb = F << cfg_.depth;
    bott_a_ = add_conv("bottleneck.conv_a", in, fb, 3, false, rng);
    bott_b_ = add_conv("bottleneck.conv_b", fb, fb / 2, 3, false, rng);
    in = fb / 2;
    up_.resize(cfg_.depth);
    dec_a_.resize(cfg_.depth);
    dec_b_.resize(cfg_.depth);
    for (int i = cfg_.depth - 1; i >= 0; --i) {
        const int fi = F << i;
        up_[i] = add_conv("dec" + std::to_string(i) + ".up", in, fi / 2, 2, true, rng);
        dec_a_[i] = add_conv("dec" + std::to_string(i) + ".conv_a", fi, fi, 3, false, rng);
        dec_b_[i] = add_conv("dec" + std::to_string(i) + ".conv_b", fi, fi / 2, 3, false, rng);
        in = fi / 2;
    }
    head_ = add_conv("head", in, 1, 1, false, rng);
}

UNet::Conv UNet::add_conv(const std::string& name, int in, int out, int kernel, bool transposed,
                          std::mt19937_64& rng) {
    Conv c;
    c.in = in;
    c.out = out;
    c.kernel = kernel;
    std::vector<std::int64_t> shape = transposed ? std::vector<std::int64_t>{in, out, kernel, kernel}
                                                 : std::vector<std::int64_t>{out, in, kernel, kernel};
    nn::Param w(name + ".weight", shape);
    if (kernel == 3) {
        nn::init_he_uniform(w, in * kernel * kernel, rng);
    } else if (transposed) {
        // Keras computes transposed-kernel fans from (k, k, out, in).
        nn::init_glorot_uniform(w, out * kernel * kernel, in * kernel * kernel, rng);
    } else {
        nn::init_glorot_uniform(w, in * kernel * kernel, out * kernel * kernel, rng);
    }
    c.weight = params_.size();
    params_.push_back(std::move(w));
    c.bias = params_.size();
    params_.emplace_back(name + ".bias", std::vector<std::int64_t>{out});
    return c;
}

std::vector<nn::Param*> UNet::param_ptrs() {
    std::vector<nn::Param*> out;
    out.reserve(params_.size());
    for (auto& p : params_) {
        out.push_back(&p);
    }
    return out;
}

void UNet::zero_grad() {
    for (auto& p : params_) {
        p.zero_grad();
    }
}

std::size_t UNet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        n += p.size();
    }
    return n;
}

std::vector<UNet::LayerInfo> UNet::layers() const {
    std::vector<LayerInfo> out;
    int size = cfg_.input_size;
    auto name_of = [&](const Conv& c) {
        const std::string& n = params_[c.weight].name;
        return n.substr(0, n.size() - std::string(".weight").size());
    };
    for (int i = 0; i < cfg_.depth; ++i) {
        out.push_back({name_of(enc_a_[i]), enc_a_[i].in, enc_a_[i].out, 3, size, size});
        out.push_back({name_of(enc_b_[i]), enc_b_[i].in, enc_b_[i].out, 3, size, size});
        size /= 2;
    }
    out.push_back({name_of(bott_a_), bott_a_.in, bott_a_.out, 3, size, size});
    out.push_back({name_of(bott_b_), bott_b_.in, bott_b_.out, 3, size, size});
    for (int i = cfg_.depth - 1; i >= 0; --i) {
        size *= 2;
        out.push_back({name_of(up_[i]), up_[i].in, up_[i].out, 2, size, size});
        out.push_back({name_of(dec_a_[i]), dec_a_[i].in, dec_a_[i].out, 3, size, size});
        out.push_back({name_of(dec_b_[i]), dec_b_[i].in, dec_b_[i].out, 3, size, size});
    }
    out.push_back({name_of(head_), head_.in, head_.out, 1, size, size});
    return out;
}

namespace {

const ConvGeometry kSame3{3, 1, 1};
const ConvGeometry kPoint{1, 1, 0};

float sigmoid(float z) {
    return z >= 0.0f ? 1.0f / (1.0f + std::exp(-z)) : std::exp(z) / (1.0f + std::exp(z));
}

}  // namespace

Tensor UNet::forward(const ImageTensor& img, Trace* trace) const {
    if (img.height != cfg_.input_size || img.width != cfg_.input_size || img.channels != cfg_.input_channels) {
        throw std::invalid_argument("U-Net expects " + std::to_string(cfg_.input_size) + "x" +
                                    std::to_string(cfg_.input_size) + "x" + std::to_string(cfg_.input_channels) +
                                    " input, got " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                                    "x" + std::to_string(img.channels));
    }
    auto conv = [&](const Tensor& x, const Conv& c, const ConvGeometry& g, bool relu) {
        Tensor y = nn::conv2d(x, params_[c.weight].value, params_[c.bias].value, c.out, g);
        if (relu) {
            nn::relu_inplace(y);
        }
        return y;
    };

    Tensor x = nn::to_chw(img);
    if (trace) {
        trace->input = x;
    }
    std::vector<Tensor> skips(cfg_.depth);
    for (int i = 0; i < cfg_.depth; ++i) {
        Tensor a = conv(x, enc_a_[i], kSame3, true);
        Tensor b = conv(a, enc_b_[i], kSame3, true);
        std::vector<std::uint32_t> idx;
        x = nn::maxpool2x2(b, trace ? &idx : nullptr);
        if (trace) {
            trace->enc_a.push_back(std::move(a));
            trace->enc_b.push_back(b);
            trace->pool_idx.push_back(std::move(idx));
            trace->pooled.push_back(x);
        }
        skips[i] = std::move(b);
    }
    Tensor ba = conv(x, bott_a_, kSame3, true);
    x = conv(ba, bott_b_, kSame3, true);
    if (trace) {
        trace->bott_a = std::move(ba);
        trace->bott_b = x;
        trace->up_in.resize(cfg_.depth);
        trace->dec_in.resize(cfg_.depth);
        trace->dec_a.resize(cfg_.depth);
        trace->dec_b.resize(cfg_.depth);
    }
    for (int i = cfg_.depth - 1; i >= 0; --i) {
        Tensor up = nn::conv_transpose2x2(x, params_[up_[i].weight].value, params_[up_[i].bias].value, up_[i].out);
        Tensor cat = nn::concat_channels(up, skips[i]);
        Tensor a = conv(cat, dec_a_[i], kSame3, true);
        Tensor b = conv(a, dec_b_[i], kSame3, true);
        if (trace) {
            trace->up_in[i] = std::move(x);
            trace->dec_in[i] = std::move(cat);
            trace->dec_a[i] = std::move(a);
            trace->dec_b[i] = b;
        }
        x = std::move(b);
    }
    return conv(x, head_, kPoint, false);
}

MaskTensor UNet::predict(const ImageTensor& img) const {
    const Tensor logits = forward(img, nullptr);
    MaskTensor out(logits.h, logits.w);
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        out.values[i] = sigmoid(logits.data[i]);
    }
    return out;
}

void UNet::backward(Trace& t, Tensor dlogits) {
    auto conv_back = [&](const Tensor& x, Tensor& dy, const Conv& c, const ConvGeometry& g, const Tensor* y_relu,
                         bool need_dx) {
        if (y_relu) {
            nn::relu_backward_inplace(dy, *y_relu);
        }
        Tensor dx;
        nn::conv2d_backward(x, dy, params_[c.weight].value, g, need_dx ? &dx : nullptr, params_[c.weight].grad,
                            params_[c.bias].grad);
        return dx;
    };

    const Tensor& last = cfg_.depth > 0 ? t.dec_b[0] : t.bott_b;
    Tensor dx = conv_back(last, dlogits, head_, kPoint, nullptr, true);

    std::vector<Tensor> dskip(cfg_.depth);
    for (int i = 0; i < cfg_.depth; ++i) {
        // dx is the gradient w.r.t. dec_b[i] (post-ReLU).
        Tensor da = conv_back(t.dec_a[i], dx, dec_b_[i], kSame3, &t.dec_b[i], true);
        Tensor dcat = conv_back(t.dec_in[i], da, dec_a_[i], kSame3, &t.dec_a[i], true);
        const int up_ch = up_[i].out;
        Tensor dup(up_ch, dcat.h, dcat.w);
        std::copy_n(dcat.data.begin(), dup.size(), dup.data.begin());
        dskip[i] = Tensor(dcat.c - up_ch, dcat.h, dcat.w);
        std::copy(dcat.data.begin() + static_cast<std::ptrdiff_t>(dup.size()), dcat.data.end(),
                  dskip[i].data.begin());
        Tensor dup_in;
        nn::conv_transpose2x2_backward(t.up_in[i], dup, params_[up_[i].weight].value, &dup_in,
                                       params_[up_[i].weight].grad, params_[up_[i].bias].grad);
        dx = std::move(dup_in);
    }

    // dx is now the gradient w.r.t. bott_b.
    Tensor dba = conv_back(t.bott_a, dx, bott_b_, kSame3, &t.bott_b, true);
    dx = conv_back(t.pooled[cfg_.depth - 1], dba, bott_a_, kSame3, &t.bott_a, true);

    for (int i = cfg_.depth - 1; i >= 0; --i) {
        const Tensor& b = t.enc_b[i];
        Tensor db = nn::maxpool2x2_backward(dx, t.pool_idx[i], b.c, b.h, b.w);
        for (std::size_t k = 0; k < db.data.size(); ++k) {
            db.data[k] += dskip[i].data[k];
        }
        Tensor da = conv_back(t.enc_a[i], db, enc_b_[i], kSame3, &t.enc_b[i], true);
        const Tensor& in = i == 0 ? t.input : t.pooled[i - 1];
        dx = conv_back(in, da, enc_a_[i], kSame3, &t.enc_a[i], i > 0);
    }
}

UNet::SampleStats UNet::accumulate_gradients(const ImageTensor& img, const MaskTensor& target, float grad_scale) {
    if (target.height != cfg_.input_size || target.width != cfg_.input_size) {
        throw std::invalid_argument("U-Net target mask has the wrong size");
    }
    Trace trace;
    Tensor logits = forward(img, &trace);
    const auto n = static_cast<double>(logits.size());
    MaskTensor prob(logits.h, logits.w);
    double bce = 0.0;
    Tensor dlogits(1, logits.h, logits.w);
    for (std::size_t i = 0; i < logits.data.size(); ++i) {
        const double z = logits.data[i];
        const double y = target.values[i];
        // Numerically stable logistic loss on logits.
        bce += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
        const float p = sigmoid(logits.data[i]);
        prob.values[i] = p;
        dlogits.data[i] = static_cast<float>((p - y) / n) * grad_scale;
    }
    backward(trace, std::move(dlogits));
    return {bce / n, dice_coefficient(prob, target)};
}

std::map<std::string, TensorBlob> UNet::export_parameters() const {
    std::map<std::string, TensorBlob> out;
    for (const auto& p : params_) {
        out[p.name] = TensorBlob{p.shape, p.value};
    }
    return out;
}

void UNet::import_parameters(const std::map<std::string, TensorBlob>& tensors) {
    for (auto& p : params_) {
        auto it = tensors.find(p.name);
        if (it == tensors.end()) {
            throw std::runtime_error("checkpoint is missing parameter " + p.name);
        }
        if (it->second.shape != p.shape || it->second.data.size() != p.value.size()) {
            throw std::runtime_error("checkpoint parameter " + p.name + " has the wrong shape");
        }
        p.value = it->second.data;
    }
}

void SegmentationCheckpoint::save(const std::filesystem::path& path) const {
    Container c;
    c.meta["kind"] = "segmentation";
    c.meta["config"] = model.config().to_json();
    c.meta["epoch"] = epoch;
    c.meta["val_bce"] = val_bce;
    c.meta["val_dice"] = val_dice;
    auto hist = nlohmann::json::array();
    for (const auto& h : history) {
        hist.push_back({{"epoch", h.epoch}, {"train_bce", h.train_bce}, {"train_dice", h.train_dice},
                        {"val_bce", h.val_bce}, {"val_dice", h.val_dice}});
    }
    c.meta["history"] = hist;
    c.meta["metadata"] = metadata;
    c.tensors = model.export_parameters();
    save_container(path, c);
}

SegmentationCheckpoint SegmentationCheckpoint::load(const std::filesystem::path& path) {
    const Container c = load_container(path);
    if (c.meta.value("kind", "") != "segmentation") {
        throw std::runtime_error("not a segmentation checkpoint: " + path.string());
    }
    SegmentationCheckpoint ckpt{UNet(UNetConfig::from_json(c.meta.at("config")))};
    ckpt.model.import_parameters(c.tensors);
    ckpt.epoch = c.meta.at("epoch").get<int>();
    ckpt.val_bce = c.meta.at("val_bce").get<double>();
    ckpt.val_dice = c.meta.at("val_dice").get<double>();
    for (const auto& h : c.meta.at("history")) {
        ckpt.history.push_back({h.at("epoch").get<int>(), h.at("train_bce").get<double>(),
                                h.at("train_dice").get<double>(), h.at("val_bce").get<double>(),
                                h.at("val_dice").get<double>()});
    }
    ckpt.metadata = c.meta.value("metadata", nlohmann::json::object());
    return ckpt;
}

SegmentationCheckpoint train_segmentation(const std::vector<SegSample>& train, const std::vector<SegSample>& val,
                                          const UNetConfig& cfg, const SegTrainOptions& options) {
    if (train.empty()) {
        throw std::invalid_argument("train_segmentation: empty training set");
    }
    UNet model(cfg);
    nn::Adam adam(nn::AdamOptions{cfg.learning_rate});
    std::mt19937_64 rng(cfg.seed ^ 0x5eedULL);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    SegmentationCheckpoint best{model};
    bool have_best = false;
    std::vector<SegEpochMetrics> history;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double bce_sum = 0.0, dice_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const float scale = 1.0f / static_cast<float>(end - start);
            model.zero_grad();
            for (std::size_t j = start; j < end; ++j) {
                const SegSample& s = train[order[j]];
                const auto stats = model.accumulate_gradients(s.image, s.mask, scale);
                if (!std::isfinite(stats.bce)) {
                    std::ostringstream os;
                    os << "non-finite training loss at epoch " << epoch << ", sample '" << s.id
                       << "' (last epoch mean bce " << (history.empty() ? 0.0 : history.back().train_bce) << ")";
                    throw std::runtime_error(os.str());
                }
                bce_sum += stats.bce;
                dice_sum += stats.dice;
            }
            adam.step(model.param_ptrs());
        }
        SegEpochMetrics m;
        m.epoch = epoch;
        m.train_bce = bce_sum / static_cast<double>(train.size());
        m.train_dice = dice_sum / static_cast<double>(train.size());
        if (!val.empty()) {
            double vb = 0.0, vd = 0.0;
            for (const auto& s : val) {
                const MaskTensor p = model.predict(s.image);
                vb += bce_loss(p, s.mask);
                vd += dice_coefficient(p, s.mask);
            }
            m.val_bce = vb / static_cast<double>(val.size());
            m.val_dice = vd / static_cast<double>(val.size());
        } else {
            m.val_bce = m.train_bce;
            m.val_dice = m.train_dice;
        }
        history.push_back(m);

        const bool better =
            !have_best || (cfg.selection == SelectionCriterion::MaxValDice ? m.val_dice > best.val_dice
                                                                           : m.val_bce < best.val_bce);
        if (better) {
            best.model = model;
            best.epoch = epoch;
            best.val_bce = m.val_bce;
            best.val_dice = m.val_dice;
            have_best = true;
        }
        if (options.on_epoch && !options.on_epoch(m)) {
            break;
        }
    }
    best.history = std::move(history);
    for (auto& p : best.model.params()) {
        p.zero_grad();
        std::fill(p.m.begin(), p.m.end(), 0.0f);
        std::fill(p.v.begin(), p.v.end(), 0.0f);
    }
    return best;
}

MaskTensor predict_mask(const SegmentationCheckpoint& ckpt, const ImageTensor& img) {
    return ckpt.model.predict(img);
}

void write_seg_curves_csv(const std::filesystem::path& path, const std::vector<SegEpochMetrics>& history) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << "epoch,train_bce,val_bce,train_dice,val_dice\n";
    out.precision(8);
    for (const auto& h : history) {
        out << h.epoch << ',' << h.train_bce << ',' << h.val_bce << ',' << h.train_dice << ',' << h.val_dice << '\n';
    }
}

}  // namespace busdx
