#include "busdx/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "busdx/losses.hpp"

namespace busdx {

ConfusionCounts confusion_counts(std::span<const ClassLabel> preds, std::span<const ClassLabel> truths) {
    if (preds.size() != truths.size()) {
        throw std::invalid_argument("confusion_counts: predictions and truths differ in length");
    }
    if (preds.empty()) {
        throw std::invalid_argument("confusion_counts: no samples");
    }
    ConfusionCounts cc;
    cc.total = preds.size();
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const int p = index_of(preds[i]), t = index_of(truths[i]);
        if (p < 0 || p >= kNumClasses || t < 0 || t >= kNumClasses) {
            throw std::invalid_argument("confusion_counts: unknown label");
        }
        ++cc.matrix[t][p];
        cc.correct += p == t ? 1 : 0;
    }
    for (int c = 0; c < kNumClasses; ++c) {
        ClassCounts& k = cc.per_class[c];
        for (int t = 0; t < kNumClasses; ++t) {
            for (int p = 0; p < kNumClasses; ++p) {
                const std::size_t n = cc.matrix[t][p];
                if (t == c && p == c) k.tp += n;
                else if (p == c) k.fp += n;
                else if (t == c) k.fn += n;
                else k.tn += n;
            }
        }
    }
    return cc;
}

ConfusionCounts confusion_counts(std::span<const int> preds, std::span<const int> truths) {
    auto convert = [](std::span<const int> codes) {
        std::vector<ClassLabel> out;
        out.reserve(codes.size());
        for (int v : codes) {
            if (v < 0 || v >= kNumClasses) {
                throw std::invalid_argument("confusion_counts: unknown label " + std::to_string(v));
            }
            out.push_back(static_cast<ClassLabel>(v));
        }
        return out;
    };
    const auto p = convert(preds);
    const auto t = convert(truths);
    return confusion_counts(std::span<const ClassLabel>(p), std::span<const ClassLabel>(t));
}

double f1_score(double precision, double recall) {
    return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

PrfResult prf_accuracy(const ConfusionCounts& counts) {
    PrfResult r;
    r.accuracy = counts.total ? static_cast<double>(counts.correct) / static_cast<double>(counts.total) : 0.0;
    for (int c = 0; c < kNumClasses; ++c) {
        const ClassCounts& k = counts.per_class[c];
        ClassScores& s = r.classes[c];
        s.support = k.tp + k.fn;
        if (k.tp + k.fp == 0) {
            s.precision_undefined = true;
        } else {
            s.precision = static_cast<double>(k.tp) / static_cast<double>(k.tp + k.fp);
        }
        if (k.tp + k.fn == 0) {
            s.recall_undefined = true;
        } else {
            s.recall = static_cast<double>(k.tp) / static_cast<double>(k.tp + k.fn);
        }
        s.f1_undefined = s.precision + s.recall == 0.0;
        s.f1 = f1_score(s.precision, s.recall);
    }
    return r;
}

WeightedScores weighted_average(std::span<const ClassScores> scores) {
    double total = 0.0;
    WeightedScores w;
    for (const auto& s : scores) {
        const auto n = static_cast<double>(s.support);
        total += n;
        w.precision += n * s.precision;
        w.recall += n * s.recall;
        w.f1 += n * s.f1;
    }
    if (total == 0.0) {
        return {};
    }
    w.precision /= total;
    w.recall /= total;
    w.f1 /= total;
    return w;
}

double class_consistency_sd(std::span<const double> values) {
    if (values.size() < 2) {
        return 0.0;
    }
    double mean = 0.0;
    for (double v : values) {
        mean += v;
    }
    mean /= static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) {
        ss += (v - mean) * (v - mean);
    }
    return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

SegmentationScores score_segmentation(std::span<const MaskTensor> predictions, std::span<const MaskTensor> targets) {
    if (predictions.size() != targets.size()) {
        throw std::invalid_argument("score_segmentation: prediction and target counts differ");
    }
    if (predictions.empty()) {
        throw std::invalid_argument("score_segmentation: empty test set");
    }
    SegmentationScores s;
    s.n = predictions.size();
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        s.mean_bce += bce_loss(predictions[i], targets[i]);
        s.mean_dice += dice_coefficient(binarize(predictions[i]), targets[i]);
    }
    s.mean_bce /= static_cast<double>(s.n);
    s.mean_dice /= static_cast<double>(s.n);
    return s;
}

SegmentationScores segmentation_report(const SegmentationCheckpoint& ckpt, const std::vector<SegSample>& testset) {
    if (testset.empty()) {
        throw std::invalid_argument("segmentation_report: empty test set");
    }
    std::vector<MaskTensor> preds, targets;
    for (const auto& s : testset) {
        preds.push_back(predict_mask(ckpt, s.image));
        targets.push_back(s.mask);
    }
    return score_segmentation(preds, targets);
}

EvaluationReport build_report(std::span<const ClassLabel> preds, std::span<const ClassLabel> truths,
                              std::optional<SegmentationScores> segmentation) {
    EvaluationReport r;
    r.counts = confusion_counts(preds, truths);
    const PrfResult prf = prf_accuracy(r.counts);
    r.accuracy = prf.accuracy;
    r.classes = prf.classes;
    r.weighted = weighted_average(r.classes);
    std::array<double, kNumClasses> p{}, rc{}, f{};
    for (int c = 0; c < kNumClasses; ++c) {
        p[c] = r.classes[c].precision;
        rc[c] = r.classes[c].recall;
        f[c] = r.classes[c].f1;
    }
    r.sd_precision = class_consistency_sd(p);
    r.sd_recall = class_consistency_sd(rc);
    r.sd_f1 = class_consistency_sd(f);
    r.segmentation = segmentation;
    return r;
}

nlohmann::json EvaluationReport::to_json() const {
    nlohmann::json j;
    j["name"] = name;
    j["accuracy"] = accuracy;
    for (ClassLabel c : kAllClasses) {
        const ClassScores& s = classes[index_of(c)];
        const ClassCounts& k = counts[c];
        j["classes"][std::string(to_string(c))] = {
            {"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"support", s.support},
            {"precision_undefined", s.precision_undefined}, {"recall_undefined", s.recall_undefined},
            {"f1_undefined", s.f1_undefined}, {"tp", k.tp}, {"fp", k.fp}, {"tn", k.tn}, {"fn", k.fn}};
    }
    j["weighted"] = {{"precision", weighted.precision}, {"recall", weighted.recall}, {"f1", weighted.f1}};
    j["sd"] = {{"precision", sd_precision}, {"recall", sd_recall}, {"f1", sd_f1}};
    j["confusion_matrix"] = counts.matrix;
    j["total"] = counts.total;
    if (segmentation) {
        j["segmentation"] = {{"mean_bce", segmentation->mean_bce}, {"mean_dice", segmentation->mean_dice},
                             {"n", segmentation->n}};
    }
    return j;
}

EvaluationReport EvaluationReport::from_json(const nlohmann::json& j) {
    EvaluationReport r;
    r.name = j.value("name", "");
    r.accuracy = j.at("accuracy").get<double>();
    for (ClassLabel c : kAllClasses) {
        const auto& cj = j.at("classes").at(std::string(to_string(c)));
        ClassScores& s = r.classes[index_of(c)];
        s.precision = cj.at("precision").get<double>();
        s.recall = cj.at("recall").get<double>();
        s.f1 = cj.at("f1").get<double>();
        s.support = cj.at("support").get<std::size_t>();
        s.precision_undefined = cj.value("precision_undefined", false);
        s.recall_undefined = cj.value("recall_undefined", false);
        s.f1_undefined = cj.value("f1_undefined", false);
        ClassCounts& k = r.counts.per_class[index_of(c)];
        k.tp = cj.value("tp", std::size_t{0});
        k.fp = cj.value("fp", std::size_t{0});
        k.tn = cj.value("tn", std::size_t{0});
        k.fn = cj.value("fn", std::size_t{0});
    }
    r.weighted.precision = j.at("weighted").at("precision").get<double>();
    r.weighted.recall = j.at("weighted").at("recall").get<double>();
    r.weighted.f1 = j.at("weighted").at("f1").get<double>();
    r.sd_precision = j.at("sd").at("precision").get<double>();
    r.sd_recall = j.at("sd").at("recall").get<double>();
    r.sd_f1 = j.at("sd").at("f1").get<double>();
    if (j.contains("confusion_matrix")) {
        r.counts.matrix = j.at("confusion_matrix").get<decltype(r.counts.matrix)>();
    }
    r.counts.total = j.value("total", std::size_t{0});
    for (int c = 0; c < kNumClasses; ++c) {
        r.counts.correct += r.counts.matrix[c][c];
    }
    if (j.contains("segmentation")) {
        const auto& sj = j.at("segmentation");
        r.segmentation = SegmentationScores{sj.at("mean_bce").get<double>(), sj.at("mean_dice").get<double>(),
                                            sj.at("n").get<std::size_t>()};
    }
    return r;
}

ClassificationEvaluation classification_report(const ClassifierCheckpoint& clf, const Backbone& backbone,
                                               const SegmentationCheckpoint& seg, const PreprocessOptions& preprocess,
                                               const std::vector<UltrasoundSample>& testset) {
    if (testset.empty()) {
        throw std::invalid_argument("classification_report: empty test set");
    }
    if (backbone.kind() != clf.backbone || backbone.weights_digest() != clf.backbone_digest) {
        throw std::runtime_error("classification_report: classifier checkpoint does not match the backbone");
    }
    ClassificationEvaluation out;
    std::vector<ClassLabel> preds, truths;
    std::vector<MaskTensor> pred_masks, gt_masks;
    for (const auto& sample : testset) {
        const ImageTensor input = preprocess_image(sample.image, preprocess);
        const MaskTensor prob = predict_mask(seg, input);
        const MaskTensor target = resize_mask(sample.mask, seg.model.config().input_size);
        SampleOutcome o;
        o.id = sample.id;
        o.truth = sample.label;
        o.probs = predict_class(clf, backbone, prob);
        o.pred = o.probs.argmax();
        o.dice = dice_coefficient(binarize(prob), target);
        preds.push_back(o.pred);
        truths.push_back(o.truth);
        pred_masks.push_back(prob);
        gt_masks.push_back(target);
        out.samples.push_back(std::move(o));
    }
    out.report = build_report(preds, truths, score_segmentation(pred_masks, gt_masks));
    out.report.name = std::string(to_string(preprocess.mode)) + "+unet+" + std::string(to_string(clf.backbone));
    return out;
}

namespace {

std::string pct(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << v * 100.0 << '%';
    return os.str();
}

std::string fixed4(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << v;
    return os.str();
}

std::string render(const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> widths;
    for (const auto& r : rows) {
        widths.resize(std::max(widths.size(), r.size()), 0);
        for (std::size_t i = 0; i < r.size(); ++i) {
            widths[i] = std::max(widths[i], r[i].size());
        }
    }
    std::ostringstream os;
    for (std::size_t ri = 0; ri < rows.size(); ++ri) {
        for (std::size_t i = 0; i < rows[ri].size(); ++i) {
            os << (i ? "  " : "") << (i == 0 ? std::left : std::right) << std::setw(static_cast<int>(widths[i]))
               << rows[ri][i];
        }
        os << '\n';
        if (ri == 0) {
            std::size_t total = 0;
            for (auto w : widths) total += w;
            os << std::string(total + 2 * (widths.size() - 1), '-') << '\n';
        }
    }
    return os.str();
}

}  // namespace

std::string format_segmentation_table(const std::vector<std::pair<std::string, SegmentationScores>>& rows) {
    std::vector<std::vector<std::string>> t{{"Method", "Binary Cross Entropy Loss", "Dice Coefficient Score"}};
    for (const auto& [name, s] : rows) {
        std::ostringstream d;
        d << std::fixed << std::setprecision(2) << s.mean_dice * 100.0;
        t.push_back({name, fixed4(s.mean_bce), d.str()});
    }
    return render(t);
}

std::string format_classification_table(const std::vector<EvaluationReport>& reports) {
    std::vector<std::vector<std::string>> t{{"Classifiers"}};
    for (const auto& r : reports) {
        t[0].push_back(r.name);
    }
    const char* abbrev[] = {"B", "M", "N"};
    for (int c = 0; c < kNumClasses; ++c) {
        std::vector<std::string> p{std::string("Precision (") + abbrev[c] + ")"};
        std::vector<std::string> rc{std::string("Recall (") + abbrev[c] + ")"};
        std::vector<std::string> f{std::string("F1-Score (") + abbrev[c] + ")"};
        for (const auto& r : reports) {
            p.push_back(pct(r.classes[c].precision));
            rc.push_back(pct(r.classes[c].recall));
            f.push_back(pct(r.classes[c].f1));
        }
        t.push_back(p);
        t.push_back(rc);
        t.push_back(f);
    }
    std::vector<std::string> acc{"Accuracy"}, wp{"Weighted Precision"}, wr{"Weighted Recall"}, wf{"Weighted F1"};
    for (const auto& r : reports) {
        acc.push_back(pct(r.accuracy));
        wp.push_back(pct(r.weighted.precision));
        wr.push_back(pct(r.weighted.recall));
        wf.push_back(pct(r.weighted.f1));
    }
    t.push_back(acc);
    t.push_back(wp);
    t.push_back(wr);
    t.push_back(wf);
    return render(t);
}

std::string format_sd_table(const std::vector<EvaluationReport>& reports) {
    std::vector<std::vector<std::string>> t{{"Classifiers", "SD of F1 Score", "SD of Precision", "SD of Recall"}};
    for (const auto& r : reports) {
        t.push_back({r.name, fixed4(r.sd_f1), fixed4(r.sd_precision), fixed4(r.sd_recall)});
    }
    return render(t);
}

std::string format_report(const EvaluationReport& report) {
    std::ostringstream os;
    if (report.segmentation) {
        os << format_segmentation_table({{report.name, *report.segmentation}}) << '\n';
    }
    os << format_classification_table({report}) << '\n' << format_sd_table({report});
    bool undefined = false;
    for (const auto& s : report.classes) {
        undefined = undefined || s.precision_undefined || s.recall_undefined || s.f1_undefined;
    }
    if (undefined) {
        os << "\nnote: some per-class metrics had a zero denominator and are reported as 0\n";
    }
    return os.str();
}

void write_per_sample_csv(const std::filesystem::path& path, const std::vector<SampleOutcome>& samples) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << "id,truth,pred,p_benign,p_malignant,p_normal,dice\n";
    out << std::setprecision(6);
    for (const auto& s : samples) {
        out << '"' << s.id << "\"," << to_string(s.truth) << ',' << to_string(s.pred) << ',' << s.probs.p[0] << ','
            << s.probs.p[1] << ',' << s.probs.p[2] << ',' << s.dice << '\n';
    }
}

}  // namespace busdx
