#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "busdx/backbone.hpp"
#include "busdx/container.hpp"
#include "busdx/dataset.hpp"
#include "busdx/image.hpp"
#include "busdx/nn/adam.hpp"

namespace busdx {

/// tanh as (e^x - e^-x) / (e^x + e^-x), evaluated without overflow.
double tanh_activation(double x);

struct HeadConfig {
    std::vector<int> dense_widths{1024, 1024, 512, 256, 128};
    double dropout_rate = 0.2;  // between the first two dense layers only
    double learning_rate = 1e-4;
    int epochs = 100;
    int batch_size = 16;
    std::uint64_t seed = 15;

    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
    static HeadConfig from_json(const nlohmann::json& j);
};

struct ClassProbabilities {
    std::array<double, kNumClasses> p{};

    [[nodiscard]] ClassLabel argmax() const;
    [[nodiscard]] double operator[](ClassLabel c) const { return p[index_of(c)]; }
};

/// Dense(w0, tanh) -> Dropout -> Dense(w1, tanh) -> ... -> Dense(w4, tanh)
/// -> Dense(3, softmax).
class ClassifierHead {
public:
    ClassifierHead(const HeadConfig& cfg, int feature_dim);

    [[nodiscard]] const HeadConfig& config() const { return cfg_; }
    [[nodiscard]] int feature_dim() const { return feature_dim_; }
    [[nodiscard]] std::size_t num_layers() const { return weights_.size(); }
    [[nodiscard]] int layer_width(std::size_t layer) const { return out_dims_[layer]; }
    [[nodiscard]] std::size_t layer_parameter_count(std::size_t layer) const;

    /// Inference-mode forward pass (dropout disabled).
    [[nodiscard]] ClassProbabilities predict(std::span<const float> features) const;

    /// Mean categorical cross-entropy of a batch with dropout active; gradients
    /// are accumulated into the parameters.
    double accumulate_gradients(const std::vector<std::span<const float>>& batch,
                                const std::vector<ClassLabel>& labels, std::mt19937_64& rng);

    std::vector<nn::Param*> param_ptrs();
    void zero_grad();
    [[nodiscard]] std::map<std::string, TensorBlob> export_parameters() const;
    void import_parameters(const std::map<std::string, TensorBlob>& tensors);

private:
    // Forward over a row-major batch; activations[i] is the input of layer i.
    void forward(const std::vector<float>& input, int batch, bool training, std::mt19937_64* rng,
                 std::vector<std::vector<float>>& activations, std::vector<float>& dropout_mask,
                 std::vector<float>& probs) const;

    HeadConfig cfg_;
    int feature_dim_;
    std::vector<int> in_dims_, out_dims_;
    std::vector<nn::Param> weights_;  // [out][in]
    std::vector<nn::Param> biases_;
};

ClassifierHead build_head(const HeadConfig& cfg, int feature_dim);

/// Replicates the mask to three channels and applies the backbone scaling.
ImageTensor mask_to_classifier_input(const MaskTensor& mask, InputScaling scaling);

struct LabeledMask {
    std::string id;
    MaskTensor mask;
    ClassLabel label = ClassLabel::Benign;
};

struct FeatureSet {
    std::vector<std::string> ids;
    std::vector<std::vector<float>> features;
    std::vector<ClassLabel> labels;

    [[nodiscard]] std::size_t size() const { return features.size(); }
};

/// Backbone features for every mask; the backbone is only read.
FeatureSet extract_feature_set(const Backbone& backbone, const std::vector<LabeledMask>& masks);

struct ClfEpochMetrics {
    int epoch = 0;  // 0 is the untrained head
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
};

struct ClassifierCheckpoint {
    ClassifierHead head;
    BackboneKind backbone = BackboneKind::VGG16;
    std::string backbone_digest;
    InputScaling scaling = InputScaling::Caffe;
    int best_epoch = 0;
    double val_loss = 0.0;
    std::vector<ClfEpochMetrics> history;
    nlohmann::json metadata = nlohmann::json::object();

    void save(const std::filesystem::path& path) const;
    static ClassifierCheckpoint load(const std::filesystem::path& path);
};

struct ClfTrainOptions {
    std::function<bool(const ClfEpochMetrics&)> on_epoch;
    std::function<void(const std::string&)> on_warning;
};

/// Mean cross-entropy and accuracy of a head over a feature set.
std::pair<double, double> evaluate_head(const ClassifierHead& head, const FeatureSet& set);

/// Trains the dense head on precomputed features. The best epoch is the one
/// with the lowest validation loss (training loss when val is empty).
ClassifierCheckpoint train_classifier(const FeatureSet& train, const FeatureSet& val, const Backbone& backbone,
                                      const HeadConfig& cfg, const ClfTrainOptions& options = {});

ClassifierCheckpoint train_classifier(const std::vector<LabeledMask>& train, const std::vector<LabeledMask>& val,
                                      const Backbone& backbone, const HeadConfig& cfg,
                                      const ClfTrainOptions& options = {});

/// Throws when the runtime backbone differs from the one the head was trained on.
ClassProbabilities predict_class(const ClassifierCheckpoint& ckpt, const Backbone& backbone, const MaskTensor& mask);

void write_clf_curves_csv(const std::filesystem::path& path, const std::vector<ClfEpochMetrics>& history);

}  // namespace busdx
