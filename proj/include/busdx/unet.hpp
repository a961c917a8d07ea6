#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "busdx/container.hpp"
#include "busdx/image.hpp"
#include "busdx/nn/adam.hpp"
#include "busdx/nn/ops.hpp"

namespace busdx {

enum class SelectionCriterion { MaxValDice, MinValBce };

std::string to_string(SelectionCriterion c);
std::optional<SelectionCriterion> parse_selection(const std::string& text);

struct UNetConfig {
    int input_size = 128;
    int input_channels = 3;
    int depth = 4;
    int base_filters = 64;
    double learning_rate = 1e-4;
    int epochs = 300;
    int batch_size = 16;
    std::uint64_t seed = 15;
    SelectionCriterion selection = SelectionCriterion::MaxValDice;

    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
    static UNetConfig from_json(const nlohmann::json& j);
};

/// One preprocessed training pair: image at the network input size and its
/// binary target mask.
struct SegSample {
    std::string id;
    ImageTensor image;
    MaskTensor mask;
};

struct SegEpochMetrics {
    int epoch = 0;
    double train_bce = 0.0;
    double train_dice = 0.0;
    double val_bce = 0.0;
    double val_dice = 0.0;
};

/// Encoder-decoder segmentation network. Each encoder block is
/// Conv3x3(F_i) -> Conv3x3(F_i/2) -> MaxPool2x2 with F_i = F * 2^i; the
/// decoder mirrors it with 2x2 stride-2 transposed convolutions and skip
/// concatenation; a 1x1 sigmoid convolution produces the mask.
class UNet {
public:
    struct LayerInfo {
        std::string name;
        int in_channels = 0;
        int out_channels = 0;
        int kernel = 0;
        int height = 0;  // output spatial size
        int width = 0;
    };

    struct SampleStats {
        double bce = 0.0;
        double dice = 0.0;
    };

    explicit UNet(const UNetConfig& cfg);

    [[nodiscard]] const UNetConfig& config() const { return cfg_; }

    /// Per-pixel tumor probability at the input resolution.
    [[nodiscard]] MaskTensor predict(const ImageTensor& img) const;

    /// Forward and backward pass on one sample. Gradients are accumulated
    /// into the parameters scaled by grad_scale (1 / batch size for a batch mean).
    SampleStats accumulate_gradients(const ImageTensor& img, const MaskTensor& target, float grad_scale);

    std::vector<nn::Param>& params() { return params_; }
    [[nodiscard]] const std::vector<nn::Param>& params() const { return params_; }
    [[nodiscard]] std::vector<nn::Param*> param_ptrs();
    void zero_grad();

    [[nodiscard]] std::vector<LayerInfo> layers() const;
    [[nodiscard]] std::size_t parameter_count() const;

    [[nodiscard]] std::map<std::string, TensorBlob> export_parameters() const;
    void import_parameters(const std::map<std::string, TensorBlob>& tensors);

private:
    struct Conv {
        std::size_t weight = 0;
        std::size_t bias = 0;
        int in = 0;
        int out = 0;
        int kernel = 3;
    };
    struct Trace;

    Conv add_conv(const std::string& name, int in, int out, int kernel, bool transposed, std::mt19937_64& rng);
    nn::Tensor forward(const ImageTensor& img, Trace* trace) const;
    void backward(Trace& trace, nn::Tensor dlogits);

    UNetConfig cfg_;
    std::vector<nn::Param> params_;
    std::vector<Conv> enc_a_, enc_b_;
    Conv bott_a_, bott_b_;
    std::vector<Conv> up_, dec_a_, dec_b_;  // indexed by resolution level
    Conv head_;
};

struct SegmentationCheckpoint {
    UNet model;
    int epoch = 0;  // best epoch, 1-based
    double val_bce = 0.0;
    double val_dice = 0.0;
    std::vector<SegEpochMetrics> history;
    nlohmann::json metadata = nlohmann::json::object();

    void save(const std::filesystem::path& path) const;
    static SegmentationCheckpoint load(const std::filesystem::path& path);
};

struct SegTrainOptions {
    /// Called after every epoch; return false to stop early.
    std::function<bool(const SegEpochMetrics&)> on_epoch;
};

/// Adam training on BCE with per-epoch train/val BCE and Dice. Returns the
/// weights of the best epoch under cfg.selection (validation metrics, or the
/// training metrics when val is empty).
SegmentationCheckpoint train_segmentation(const std::vector<SegSample>& train, const std::vector<SegSample>& val,
                                          const UNetConfig& cfg, const SegTrainOptions& options = {});

MaskTensor predict_mask(const SegmentationCheckpoint& ckpt, const ImageTensor& img);

/// Training-curve CSV: epoch,train_bce,val_bce,train_dice,val_dice.
void write_seg_curves_csv(const std::filesystem::path& path, const std::vector<SegEpochMetrics>& history);

}  // namespace busdx
