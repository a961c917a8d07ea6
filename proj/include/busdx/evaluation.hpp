#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "busdx/backbone.hpp"
#include "busdx/classifier.hpp"
#include "busdx/dataset.hpp"
#include "busdx/preprocess.hpp"
#include "busdx/unet.hpp"

namespace busdx {

/// One-vs-rest counts for a single class.
struct ClassCounts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t tn = 0;
    std::size_t fn = 0;
};

struct ConfusionCounts {
    std::array<ClassCounts, kNumClasses> per_class{};
    /// matrix[truth][pred]
    std::array<std::array<std::size_t, kNumClasses>, kNumClasses> matrix{};
    std::size_t total = 0;
    std::size_t correct = 0;

    [[nodiscard]] const ClassCounts& operator[](ClassLabel c) const { return per_class[index_of(c)]; }
};

/// Throws std::invalid_argument on length mismatch or an empty input.
ConfusionCounts confusion_counts(std::span<const ClassLabel> preds, std::span<const ClassLabel> truths);
/// Integer-coded overload; codes outside [0,3) are rejected.
ConfusionCounts confusion_counts(std::span<const int> preds, std::span<const int> truths);

struct ClassScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
    // Set when the corresponding ratio had a zero denominator and was reported as 0.
    bool precision_undefined = false;
    bool recall_undefined = false;
    bool f1_undefined = false;
};

/// Harmonic mean of precision and recall; 0 when both are 0.
double f1_score(double precision, double recall);

struct PrfResult {
    double accuracy = 0.0;
    std::array<ClassScores, kNumClasses> classes{};
};

PrfResult prf_accuracy(const ConfusionCounts& counts);

struct WeightedScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Support-weighted mean of each per-class metric.
WeightedScores weighted_average(std::span<const ClassScores> scores);

/// Sample standard deviation (divisor n - 1) of per-class values.
double class_consistency_sd(std::span<const double> values);

struct SegmentationScores {
    double mean_bce = 0.0;
    double mean_dice = 0.0;
    std::size_t n = 0;
};

/// Mean per-image BCE and Dice of a set of (prediction, target) pairs.
/// Dice is computed on predictions thresholded at 0.5.
SegmentationScores score_segmentation(std::span<const MaskTensor> predictions, std::span<const MaskTensor> targets);

/// Predicts every preprocessed test sample and averages BCE / Dice.
SegmentationScores segmentation_report(const SegmentationCheckpoint& ckpt, const std::vector<SegSample>& testset);

struct EvaluationReport {
    std::string name;  // e.g. "slic+unet+vgg16"
    double accuracy = 0.0;
    std::array<ClassScores, kNumClasses> classes{};
    WeightedScores weighted;
    double sd_precision = 0.0;
    double sd_recall = 0.0;
    double sd_f1 = 0.0;
    ConfusionCounts counts;
    std::optional<SegmentationScores> segmentation;

    [[nodiscard]] nlohmann::json to_json() const;
    static EvaluationReport from_json(const nlohmann::json& j);
};

/// Aggregates accuracy, per-class scores, weighted averages and SDs.
EvaluationReport build_report(std::span<const ClassLabel> preds, std::span<const ClassLabel> truths,
                              std::optional<SegmentationScores> segmentation = std::nullopt);

struct SampleOutcome {
    std::string id;
    ClassLabel truth = ClassLabel::Benign;
    ClassLabel pred = ClassLabel::Benign;
    ClassProbabilities probs;
    double dice = 0.0;
};

struct ClassificationEvaluation {
    EvaluationReport report;
    std::vector<SampleOutcome> samples;
};

/// Full inference path per raw test sample: preprocess, predict mask, classify.
/// Throws when the classifier and backbone are incompatible.
ClassificationEvaluation classification_report(const ClassifierCheckpoint& clf, const Backbone& backbone,
                                               const SegmentationCheckpoint& seg, const PreprocessOptions& preprocess,
                                               const std::vector<UltrasoundSample>& testset);

/// Aligned text tables mirroring the segmentation table, the per-class
/// classification table and the SD table.
std::string format_segmentation_table(const std::vector<std::pair<std::string, SegmentationScores>>& rows);
std::string format_classification_table(const std::vector<EvaluationReport>& reports);
std::string format_sd_table(const std::vector<EvaluationReport>& reports);
std::string format_report(const EvaluationReport& report);

void write_per_sample_csv(const std::filesystem::path& path, const std::vector<SampleOutcome>& samples);

}  // namespace busdx
