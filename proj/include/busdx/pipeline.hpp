#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "busdx/backbone.hpp"
#include "busdx/classifier.hpp"
#include "busdx/config.hpp"
#include "busdx/dataset.hpp"
#include "busdx/evaluation.hpp"
#include "busdx/unet.hpp"

namespace busdx {

inline constexpr const char* kVersion = "0.1.0";

/// Failure inside one pipeline stage ("scan", "preprocess", "train-seg", ...).
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& message);
    [[nodiscard]] const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

struct RunHooks {
    std::function<void(const std::string&)> log;
    std::function<bool(const SegEpochMetrics&)> on_seg_epoch;
    std::function<bool(const ClfEpochMetrics&)> on_clf_epoch;
};

/// Files written under the output directory.
struct RunLayout {
    std::filesystem::path root;

    [[nodiscard]] std::filesystem::path config() const { return root / "config.txt"; }
    [[nodiscard]] std::filesystem::path run_manifest(const std::string& command) const {
        return root / ("manifest_" + command + ".json");
    }
    [[nodiscard]] std::filesystem::path train_list() const { return root / "split_train.jsonl"; }
    [[nodiscard]] std::filesystem::path test_list() const { return root / "split_test.jsonl"; }
    [[nodiscard]] std::filesystem::path seg_checkpoint() const { return root / "segmentation.busdx"; }
    [[nodiscard]] std::filesystem::path clf_checkpoint() const { return root / "classifier.busdx"; }
    [[nodiscard]] std::filesystem::path seg_curves() const { return root / "seg_curves.csv"; }
    [[nodiscard]] std::filesystem::path clf_curves() const { return root / "clf_curves.csv"; }
};

/// Preprocessed training material: network-size images after the
/// unsupervised segmentation step and resized binary masks.
struct PreparedSplit {
    DatasetSplit split;
    std::vector<SegSample> train;
    std::vector<SegSample> test;
    std::vector<ClassLabel> train_labels;
    std::vector<ClassLabel> test_labels;
};

/// Scans the dataset, applies the hold-out split and preprocesses every
/// image and mask.
PreparedSplit prepare_split(const PipelineConfig& cfg, const RunHooks& hooks = {});

/// Stage 1 of training: U-Net on the preprocessed images.
SegmentationCheckpoint run_train_segmentation(const PipelineConfig& cfg, const RunHooks& hooks = {});
/// Stage 2 of training: dense head over frozen backbone features of the
/// ground-truth masks.
ClassifierCheckpoint run_train_classifier(const PipelineConfig& cfg, const RunHooks& hooks = {});

struct TrainingResult {
    SegmentationCheckpoint segmentation;
    ClassifierCheckpoint classifier;
};

/// Both stages in order, sharing one preprocessing pass.
TrainingResult run_training(const PipelineConfig& cfg, const RunHooks& hooks = {});

struct StageTiming {
    double load_ms = 0.0;
    double preprocess_ms = 0.0;
    double segment_ms = 0.0;
    double classify_ms = 0.0;
};

struct PredictionResult {
    std::filesystem::path input;
    std::string id;
    bool ok = false;
    std::string error;
    MaskTensor probability;  // input_size x input_size, values in [0,1]
    MaskTensor binary;       // probability >= 0.5
    ClassProbabilities probs;
    ClassLabel label = ClassLabel::Benign;
    StageTiming timing;
    std::filesystem::path mask_file;
    std::filesystem::path probability_file;
    std::filesystem::path overlay_file;
};

/// Throws when the two checkpoints were not produced with the same
/// preprocessing settings.
PreprocessOptions checked_preprocess(const SegmentationCheckpoint& seg, const ClassifierCheckpoint& clf);

struct InferenceOptions {
    std::optional<std::filesystem::path> output_dir;  // nothing written when empty
    bool overlays = true;
};

/// Runs every input through preprocessing, segmentation and classification.
/// Unreadable inputs produce a failed result and the batch continues; the
/// result order follows the input order. Preprocessing settings come from
/// the checkpoints.
std::vector<PredictionResult> run_inference(const std::vector<std::filesystem::path>& inputs,
                                            const SegmentationCheckpoint& seg, const ClassifierCheckpoint& clf,
                                            const Backbone& backbone, const InferenceOptions& options = {});

void write_results_table(const std::filesystem::path& csv_path, const std::vector<PredictionResult>& results);
nlohmann::json results_to_json(const std::vector<PredictionResult>& results);

/// Evaluates both checkpoints on the hold-out test split of cfg.
ClassificationEvaluation run_evaluation(const PipelineConfig& cfg, const SegmentationCheckpoint& seg,
                                        const ClassifierCheckpoint& clf, const Backbone& backbone);

/// Versions of the library and its numeric dependencies.
nlohmann::json version_info();

/// Reproducibility record: command, config hash, input hashes, versions.
nlohmann::json make_run_manifest(const std::string& command, const PipelineConfig& cfg,
                                 const std::vector<std::filesystem::path>& inputs);
void write_run_manifest(const std::filesystem::path& path, const nlohmann::json& manifest);

}  // namespace busdx
