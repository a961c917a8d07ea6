#include "busdx/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include "busdx/nn/ops.hpp"

namespace busdx {

namespace {
constexpr float kSoftmaxInitScale = 0.1f;
}  // namespace

double tanh_activation(double x) {
    // Multiplying numerator and denominator by e^-|x| keeps every exponent <= 0.
    const double e = std::exp(-2.0 * std::abs(x));
    const double t = (1.0 - e) / (1.0 + e);
    return x < 0.0 ? -t : t;
}

void HeadConfig::validate() const {
    if (dense_widths.size() != 5) {
        throw std::invalid_argument("classifier head needs exactly 5 dense widths, got " +
                                    std::to_string(dense_widths.size()));
    }
    for (int w : dense_widths) {
        if (w < 1) {
            throw std::invalid_argument("classifier head widths must be positive");
        }
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
        throw std::invalid_argument("dropout rate must lie in [0,1)");
    }
    if (!(learning_rate > 0.0) || epochs < 1 || batch_size < 1) {
        throw std::invalid_argument("classifier training needs learning_rate > 0, epochs >= 1, batch_size >= 1");
    }
}

nlohmann::json HeadConfig::to_json() const {
    return {{"dense_widths", dense_widths}, {"dropout_rate", dropout_rate}, {"learning_rate", learning_rate},
            {"epochs", epochs},           {"batch_size", batch_size},     {"seed", seed},
            {"activation", "tanh"}};
}

HeadConfig HeadConfig::from_json(const nlohmann::json& j) {
    HeadConfig c;
    c.dense_widths = j.at("dense_widths").get<std::vector<int>>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

ClassLabel ClassProbabilities::argmax() const {
    return label_from_index(static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()));
}

ClassifierHead::ClassifierHead(const HeadConfig& cfg, int feature_dim) : cfg_(cfg), feature_dim_(feature_dim) {
    cfg_.validate();
    if (feature_dim < 1) {
        throw std::invalid_argument("classifier head needs a positive feature dimension");
    }
    std::mt19937_64 rng(cfg_.seed);
    int in = feature_dim;
    std::vector<int> outs = cfg_.dense_widths;
    outs.push_back(kNumClasses);
    for (std::size_t i = 0; i < outs.size(); ++i) {
        const std::string name = i + 1 == outs.size() ? "softmax" : "dense" + std::to_string(i);
        nn::Param w(name + ".weight", {outs[i], in});
        nn::init_glorot_uniform(w, in, outs[i], rng);
        if (i + 1 == outs.size()) {
            // small softmax weights keep the untrained head near uniform
            for (float& v : w.value) v *= kSoftmaxInitScale;
        }
        weights_.push_back(std::move(w));
        biases_.emplace_back(name + ".bias", std::vector<std::int64_t>{outs[i]});
        in_dims_.push_back(in);
        out_dims_.push_back(outs[i]);
        in = outs[i];
    }
}

std::size_t ClassifierHead::layer_parameter_count(std::size_t layer) const {
    return weights_.at(layer).size() + biases_.at(layer).size();
}

void ClassifierHead::forward(const std::vector<float>& input, int batch, bool training, std::mt19937_64* rng,
                             std::vector<std::vector<float>>& activations, std::vector<float>& dropout_mask,
                             std::vector<float>& probs) const {
    activations.assign(1, input);
    const std::size_t n_layers = weights_.size();
    for (std::size_t l = 0; l < n_layers; ++l) {
        const int in = in_dims_[l], out = out_dims_[l];
        std::vector<float> z(static_cast<std::size_t>(batch) * out);
        for (int b = 0; b < batch; ++b) {
            std::copy(biases_[l].value.begin(), biases_[l].value.end(), z.begin() + static_cast<std::ptrdiff_t>(b) * out);
        }
        nn::gemm(false, true, batch, out, in, 1.0f, activations.back().data(), weights_[l].value.data(), 1.0f,
                 z.data());
        if (l + 1 == n_layers) {
            probs.resize(z.size());
            for (int b = 0; b < batch; ++b) {
                const float* zr = z.data() + static_cast<std::size_t>(b) * out;
                float* pr = probs.data() + static_cast<std::size_t>(b) * out;
                const float mx = *std::max_element(zr, zr + out);
                double s = 0.0;
                for (int k = 0; k < out; ++k) {
                    s += std::exp(static_cast<double>(zr[k] - mx));
                }
                for (int k = 0; k < out; ++k) {
                    pr[k] = static_cast<float>(std::exp(static_cast<double>(zr[k] - mx)) / s);
                }
            }
            break;
        }
        for (float& v : z) {
            v = static_cast<float>(tanh_activation(v));
        }
        if (l == 0 && training && cfg_.dropout_rate > 0.0) {
            const double keep = 1.0 - cfg_.dropout_rate;
            std::bernoulli_distribution bern(keep);
            dropout_mask.resize(z.size());
            for (std::size_t i = 0; i < z.size(); ++i) {
                dropout_mask[i] = bern(*rng) ? static_cast<float>(1.0 / keep) : 0.0f;
                z[i] *= dropout_mask[i];
            }
        }
        activations.push_back(std::move(z));
    }
}

ClassProbabilities ClassifierHead::predict(std::span<const float> features) const {
    if (static_cast<int>(features.size()) != feature_dim_) {
        throw std::invalid_argument("classifier head expects " + std::to_string(feature_dim_) + " features, got " +
                                    std::to_string(features.size()));
    }
    std::vector<std::vector<float>> acts;
    std::vector<float> mask, probs;
    forward(std::vector<float>(features.begin(), features.end()), 1, false, nullptr, acts, mask, probs);
    ClassProbabilities out;
    for (int k = 0; k < kNumClasses; ++k) {
        out.p[k] = probs[k];
    }
    return out;
}

double ClassifierHead::accumulate_gradients(const std::vector<std::span<const float>>& batch,
                                            const std::vector<ClassLabel>& labels, std::mt19937_64& rng) {
    const int B = static_cast<int>(batch.size());
    std::vector<float> input(static_cast<std::size_t>(B) * feature_dim_);
    for (int b = 0; b < B; ++b) {
        if (static_cast<int>(batch[b].size()) != feature_dim_) {
            throw std::invalid_argument("feature vector has the wrong dimension");
        }
        std::copy(batch[b].begin(), batch[b].end(), input.begin() + static_cast<std::ptrdiff_t>(b) * feature_dim_);
    }
    std::vector<std::vector<float>> acts;
    std::vector<float> dmask, probs;
    forward(input, B, true, &rng, acts, dmask, probs);

    double loss = 0.0;
    std::vector<float> dz(probs.size());
    for (int b = 0; b < B; ++b) {
        const int y = index_of(labels[b]);
        loss -= std::log(std::max(static_cast<double>(probs[static_cast<std::size_t>(b) * kNumClasses + y]), 1e-12));
        for (int k = 0; k < kNumClasses; ++k) {
            const std::size_t i = static_cast<std::size_t>(b) * kNumClasses + k;
            dz[i] = (probs[i] - (k == y ? 1.0f : 0.0f)) / static_cast<float>(B);
        }
    }

    for (int l = static_cast<int>(weights_.size()) - 1; l >= 0; --l) {
        const int in = in_dims_[l], out = out_dims_[l];
        const std::vector<float>& x = acts[l];
        nn::gemm(true, false, out, in, B, 1.0f, dz.data(), x.data(), 1.0f, weights_[l].grad.data());
        for (int b = 0; b < B; ++b) {
            for (int k = 0; k < out; ++k) {
                biases_[l].grad[k] += dz[static_cast<std::size_t>(b) * out + k];
            }
        }
        if (l == 0) {
            break;
        }
        std::vector<float> dx(static_cast<std::size_t>(B) * in);
        nn::gemm(false, false, B, in, out, 1.0f, dz.data(), weights_[l].value.data(), 0.0f, dx.data());
        // x = tanh(z) (times the dropout mask after layer 0).
        const bool dropped = l == 1 && !dmask.empty();
        for (std::size_t i = 0; i < dx.size(); ++i) {
            float t = x[i];
            if (dropped) {
                if (dmask[i] == 0.0f) {
                    dx[i] = 0.0f;
                    continue;
                }
                dx[i] *= dmask[i];
                t /= dmask[i];
            }
            dx[i] *= 1.0f - t * t;
        }
        dz = std::move(dx);
    }
    return loss / B;
}

std::vector<nn::Param*> ClassifierHead::param_ptrs() {
    std::vector<nn::Param*> out;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        out.push_back(&weights_[i]);
        out.push_back(&biases_[i]);
    }
    return out;
}

void ClassifierHead::zero_grad() {
    for (auto* p : param_ptrs()) {
        p->zero_grad();
    }
}

std::map<std::string, TensorBlob> ClassifierHead::export_parameters() const {
    std::map<std::string, TensorBlob> out;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        out[weights_[i].name] = TensorBlob{weights_[i].shape, weights_[i].value};
        out[biases_[i].name] = TensorBlob{biases_[i].shape, biases_[i].value};
    }
    return out;
}

void ClassifierHead::import_parameters(const std::map<std::string, TensorBlob>& tensors) {
    for (auto* p : param_ptrs()) {
        auto it = tensors.find(p->name);
        if (it == tensors.end() || it->second.shape != p->shape) {
            throw std::runtime_error("classifier checkpoint is missing or misshapes " + p->name);
        }
        p->value = it->second.data;
    }
}

ClassifierHead build_head(const HeadConfig& cfg, int feature_dim) { return ClassifierHead(cfg, feature_dim); }

ImageTensor mask_to_classifier_input(const MaskTensor& mask, InputScaling scaling) {
    if (mask.values.size() != static_cast<std::size_t>(mask.height) * mask.width || mask.values.empty()) {
        throw std::invalid_argument("mask_to_classifier_input: malformed mask");
    }
    ImageTensor rgb(mask.height, mask.width, 3);
    for (std::size_t i = 0; i < mask.values.size(); ++i) {
        rgb.pixels[3 * i] = rgb.pixels[3 * i + 1] = rgb.pixels[3 * i + 2] = mask.values[i];
    }
    return apply_input_scaling(rgb, scaling);
}

FeatureSet extract_feature_set(const Backbone& backbone, const std::vector<LabeledMask>& masks) {
    FeatureSet set;
    for (const auto& m : masks) {
        set.ids.push_back(m.id);
        set.features.push_back(backbone.extract_features(mask_to_classifier_input(m.mask, backbone.scaling())));
        set.labels.push_back(m.label);
    }
    return set;
}

std::pair<double, double> evaluate_head(const ClassifierHead& head, const FeatureSet& set) {
    if (set.size() == 0) {
        return {0.0, 0.0};
    }
    double loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < set.size(); ++i) {
        const ClassProbabilities p = head.predict(set.features[i]);
        loss -= std::log(std::max(p[set.labels[i]], 1e-12));
        correct += p.argmax() == set.labels[i] ? 1 : 0;
    }
    const auto n = static_cast<double>(set.size());
    return {loss / n, static_cast<double>(correct) / n};
}

ClassifierCheckpoint train_classifier(const FeatureSet& train, const FeatureSet& val, const Backbone& backbone,
                                      const HeadConfig& cfg, const ClfTrainOptions& options) {
    if (train.size() == 0) {
        throw std::invalid_argument("train_classifier: empty training set");
    }
    cfg.validate();
    for (ClassLabel c : kAllClasses) {
        if (std::find(train.labels.begin(), train.labels.end(), c) == train.labels.end()) {
            const std::string msg = "class '" + std::string(to_string(c)) + "' is absent from the training set";
            if (options.on_warning) {
                options.on_warning(msg);
            } else {
                std::clog << "warning: " << msg << '\n';
            }
        }
    }
    const int dim = static_cast<int>(train.features.front().size());
    ClassifierHead head(cfg, dim);
    nn::Adam adam(nn::AdamOptions{cfg.learning_rate});
    std::mt19937_64 rng(cfg.seed ^ 0xc1a55ULL);

    auto measure = [&](int epoch) {
        ClfEpochMetrics m;
        m.epoch = epoch;
        std::tie(m.train_loss, m.train_accuracy) = evaluate_head(head, train);
        if (val.size() > 0) {
            std::tie(m.val_loss, m.val_accuracy) = evaluate_head(head, val);
        } else {
            m.val_loss = m.train_loss;
            m.val_accuracy = m.train_accuracy;
        }
        return m;
    };

    ClassifierCheckpoint best{head, backbone.kind(), backbone.weights_digest(), backbone.scaling()};
    std::vector<ClfEpochMetrics> history{measure(0)};
    best.val_loss = history.front().val_loss;
    if (options.on_epoch) {
        options.on_epoch(history.front());
    }

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<std::span<const float>> batch;
            std::vector<ClassLabel> labels;
            for (std::size_t j = start; j < end; ++j) {
                batch.emplace_back(train.features[order[j]]);
                labels.push_back(train.labels[order[j]]);
            }
            head.zero_grad();
            const double loss = head.accumulate_gradients(batch, labels, rng);
            if (!std::isfinite(loss)) {
                throw std::runtime_error("non-finite classifier loss at epoch " + std::to_string(epoch));
            }
            adam.step(head.param_ptrs());
        }
        const ClfEpochMetrics m = measure(epoch);
        history.push_back(m);
        if (m.val_loss < best.val_loss) {
            best.head = head;
            best.best_epoch = epoch;
            best.val_loss = m.val_loss;
        }
        if (options.on_epoch && !options.on_epoch(m)) {
            break;
        }
    }
    best.history = std::move(history);
    return best;
}

ClassifierCheckpoint train_classifier(const std::vector<LabeledMask>& train, const std::vector<LabeledMask>& val,
                                      const Backbone& backbone, const HeadConfig& cfg,
                                      const ClfTrainOptions& options) {
    return train_classifier(extract_feature_set(backbone, train), extract_feature_set(backbone, val), backbone, cfg,
                            options);
}

ClassProbabilities predict_class(const ClassifierCheckpoint& ckpt, const Backbone& backbone, const MaskTensor& mask) {
    if (backbone.kind() != ckpt.backbone || backbone.weights_digest() != ckpt.backbone_digest) {
        throw std::runtime_error("classifier was trained with backbone " + std::string(to_string(ckpt.backbone)) +
                                 " (" + ckpt.backbone_digest.substr(0, 12) + "), runtime backbone is " +
                                 std::string(to_string(backbone.kind())) + " (" +
                                 backbone.weights_digest().substr(0, 12) + ")");
    }
    return ckpt.head.predict(backbone.extract_features(mask_to_classifier_input(mask, ckpt.scaling)));
}

void ClassifierCheckpoint::save(const std::filesystem::path& path) const {
    Container c;
    c.meta["kind"] = "classifier";
    c.meta["backbone"] = std::string(to_string(backbone));
    c.meta["backbone_digest"] = backbone_digest;
    c.meta["input_scaling"] = std::string(to_string(scaling));
    c.meta["head"] = head.config().to_json();
    c.meta["feature_dim"] = head.feature_dim();
    c.meta["best_epoch"] = best_epoch;
    c.meta["val_loss"] = val_loss;
    auto hist = nlohmann::json::array();
    for (const auto& h : history) {
        hist.push_back({{"epoch", h.epoch}, {"train_loss", h.train_loss}, {"train_accuracy", h.train_accuracy},
                        {"val_loss", h.val_loss}, {"val_accuracy", h.val_accuracy}});
    }
    c.meta["history"] = hist;
    c.meta["metadata"] = metadata;
    c.tensors = head.export_parameters();
    save_container(path, c);
}

ClassifierCheckpoint ClassifierCheckpoint::load(const std::filesystem::path& path) {
    const Container c = load_container(path);
    if (c.meta.value("kind", "") != "classifier") {
        throw std::runtime_error("not a classifier checkpoint: " + path.string());
    }
    const auto kind = parse_backbone(c.meta.at("backbone").get<std::string>());
    const auto scaling = parse_scaling(c.meta.at("input_scaling").get<std::string>());
    if (!kind || !scaling) {
        throw std::runtime_error("classifier checkpoint has an unknown backbone or scaling: " + path.string());
    }
    ClassifierCheckpoint ckpt{ClassifierHead(HeadConfig::from_json(c.meta.at("head")), c.meta.at("feature_dim").get<int>()),
                              *kind, c.meta.at("backbone_digest").get<std::string>(), *scaling};
    ckpt.head.import_parameters(c.tensors);
    ckpt.best_epoch = c.meta.at("best_epoch").get<int>();
    ckpt.val_loss = c.meta.at("val_loss").get<double>();
    for (const auto& h : c.meta.at("history")) {
        ckpt.history.push_back({h.at("epoch").get<int>(), h.at("train_loss").get<double>(),
                                h.at("train_accuracy").get<double>(), h.at("val_loss").get<double>(),
                                h.at("val_accuracy").get<double>()});
    }
    ckpt.metadata = c.meta.value("metadata", nlohmann::json::object());
    return ckpt;
}

void write_clf_curves_csv(const std::filesystem::path& path, const std::vector<ClfEpochMetrics>& history) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << "epoch,train_loss,val_loss,train_accuracy,val_accuracy\n";
    out.precision(8);
    for (const auto& h : history) {
        out << h.epoch << ',' << h.train_loss << ',' << h.val_loss << ',' << h.train_accuracy << ','
            << h.val_accuracy << '\n';
    }
}

}  // namespace busdx
