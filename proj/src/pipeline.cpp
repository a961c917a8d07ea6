#include "busdx/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <cblas.h>
#include <openssl/crypto.h>
#include <opencv2/core/version.hpp>

#include "busdx/overlay.hpp"
#include "busdx/preprocess.hpp"

namespace fs = std::filesystem;

namespace busdx {

StageError::StageError(std::string stage, const std::string& message)
    : std::runtime_error("[" + stage + "] " + message), stage_(std::move(stage)) {}

namespace {

void log(const RunHooks& hooks, const std::string& msg) {
    if (hooks.log) {
        hooks.log(msg);
    }
}

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

// Runs fn, converting any failure into a StageError tagged with the stage.
template <typename Fn>
auto stage(const std::string& name, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

// Tracks the manifest of one training command; the run stays flagged
// incomplete until finish() is called.
class RunRecord {
public:
    RunRecord(const std::string& command, const PipelineConfig& cfg, const std::vector<fs::path>& inputs)
        : path_(RunLayout{cfg.output_dir}.run_manifest(command)) {
        fs::create_directories(cfg.output_dir);
        manifest_ = make_run_manifest(command, cfg, inputs);
        manifest_["status"] = "incomplete";
        manifest_["artifacts"] = nlohmann::json::array();
        write_run_manifest(path_, manifest_);
    }

    void artifact(const fs::path& p) {
        manifest_["artifacts"].push_back({{"path", p.filename().string()}, {"sha256", sha256_file(p)}});
        write_run_manifest(path_, manifest_);
    }

    void fail(const StageError& e) {
        manifest_["status"] = "incomplete";
        manifest_["failed_stage"] = e.stage();
        manifest_["error"] = e.what();
        write_run_manifest(path_, manifest_);
    }

    void finish() {
        manifest_["status"] = "complete";
        manifest_["finished"] = utc_now();
        write_run_manifest(path_, manifest_);
    }

private:
    fs::path path_;
    nlohmann::json manifest_;
};

std::vector<fs::path> dataset_files(const DatasetIndex& index) {
    std::vector<fs::path> files;
    for (const auto& r : index.records) {
        files.push_back(r.raw_path);
        files.insert(files.end(), r.mask_paths.begin(), r.mask_paths.end());
    }
    return files;
}

void check_input_size(const PipelineConfig& cfg) {
    if (cfg.unet.input_size != kInputSize) {
        throw StageError("config", "unet.input_size must be " + std::to_string(kInputSize));
    }
}

nlohmann::json checkpoint_metadata(const PipelineConfig& cfg, const PreparedSplit& data) {
    return {{"preprocess", preprocess_to_json(cfg.preprocess)},
            {"config_sha256", sha256_hex(cfg.to_text())},
            {"split", {{"ratio", cfg.split_ratio}, {"seed", cfg.split_seed},
                       {"train", data.split.train.size()}, {"test", data.split.test.size()}}},
            {"created", utc_now()},
            {"version", kVersion}};
}

struct Prepared {
    DatasetIndex index;
    PreparedSplit data;
};

Prepared prepare(const PipelineConfig& cfg, const RunHooks& hooks, bool with_images) {
    Prepared p;
    p.index = stage("scan", [&] { return scan_dataset(cfg.dataset_root); });
    if (p.index.records.empty()) {
        throw StageError("scan", "no samples found under " + cfg.dataset_root.string());
    }
    p.data.split = stage("split", [&] { return split_holdout(p.index, cfg.split_ratio, cfg.split_seed); });
    log(hooks, "dataset: " + std::to_string(p.index.records.size()) + " samples, " +
                   std::to_string(p.data.split.train.size()) + " train / " +
                   std::to_string(p.data.split.test.size()) + " test");
    stage("preprocess", [&] {
        auto convert = [&](const std::vector<SampleRecord>& records, std::vector<SegSample>& out,
                           std::vector<ClassLabel>& labels) {
            for (const auto& r : records) {
                const UltrasoundSample s = load_sample(r);
                SegSample seg;
                seg.id = s.id;
                if (with_images) {
                    seg.image = preprocess_image(s.image, cfg.preprocess);
                }
                seg.mask = resize_mask(s.mask, kInputSize);
                out.push_back(std::move(seg));
                labels.push_back(s.label);
                if (out.size() % 50 == 0) {
                    log(hooks, "preprocessed " + std::to_string(out.size()) + "/" + std::to_string(records.size()));
                }
            }
        };
        convert(p.data.split.train, p.data.train, p.data.train_labels);
        convert(p.data.split.test, p.data.test, p.data.test_labels);
        return 0;
    });
    return p;
}

void write_split_lists(const PipelineConfig& cfg, const PreparedSplit& data) {
    const RunLayout layout{cfg.output_dir};
    write_manifest(make_index(data.split.train), layout.train_list());
    write_manifest(make_index(data.split.test), layout.test_list());
}

SegmentationCheckpoint train_seg_stage(const PipelineConfig& cfg, const PreparedSplit& data, const RunHooks& hooks,
                                       RunRecord& record) {
    const RunLayout layout{cfg.output_dir};
    return stage("train-seg", [&] {
        log(hooks, "training U-Net for up to " + std::to_string(cfg.unet.epochs) + " epochs");
        SegTrainOptions opts;
        opts.on_epoch = hooks.on_seg_epoch;
        SegmentationCheckpoint ckpt = train_segmentation(data.train, data.test, cfg.unet, opts);
        ckpt.metadata = checkpoint_metadata(cfg, data);
        ckpt.save(layout.seg_checkpoint());
        write_seg_curves_csv(layout.seg_curves(), ckpt.history);
        record.artifact(layout.seg_checkpoint());
        record.artifact(layout.seg_curves());
        log(hooks, "segmentation checkpoint: epoch " + std::to_string(ckpt.epoch) + ", val dice " +
                       std::to_string(ckpt.val_dice));
        return ckpt;
    });
}

std::vector<LabeledMask> labeled_masks(const std::vector<SegSample>& samples, const std::vector<ClassLabel>& labels) {
    std::vector<LabeledMask> out;
    out.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        out.push_back({samples[i].id, samples[i].mask, labels[i]});
    }
    return out;
}

ClassifierCheckpoint train_clf_stage(const PipelineConfig& cfg, const PreparedSplit& data, const Backbone& backbone,
                                     const RunHooks& hooks, RunRecord& record) {
    const RunLayout layout{cfg.output_dir};
    return stage("train-clf", [&] {
        log(hooks, "training classifier head on " + std::string(to_string(cfg.backbone)) + " features");
        ClfTrainOptions opts;
        opts.on_epoch = hooks.on_clf_epoch;
        opts.on_warning = [&](const std::string& w) { log(hooks, "warning: " + w); };
        ClassifierCheckpoint ckpt = train_classifier(labeled_masks(data.train, data.train_labels),
                                                     labeled_masks(data.test, data.test_labels), backbone, cfg.head,
                                                     opts);
        ckpt.metadata = checkpoint_metadata(cfg, data);
        ckpt.save(layout.clf_checkpoint());
        write_clf_curves_csv(layout.clf_curves(), ckpt.history);
        record.artifact(layout.clf_checkpoint());
        record.artifact(layout.clf_curves());
        log(hooks, "classifier checkpoint: epoch " + std::to_string(ckpt.best_epoch) + ", val loss " +
                       std::to_string(ckpt.val_loss));
        return ckpt;
    });
}

Backbone load_backbone(const PipelineConfig& cfg) {
    return stage("backbone", [&] { return Backbone::load(cfg.backbone, cfg.weights_dir); });
}

std::vector<fs::path> training_inputs(const PipelineConfig& cfg, bool with_weights) {
    std::vector<fs::path> inputs;
    try {
        inputs = dataset_files(scan_dataset(cfg.dataset_root));
    } catch (const std::exception&) {
        // reported by the scan stage
    }
    const fs::path w = backbone_weights_path(cfg.weights_dir, cfg.backbone);
    if (with_weights && fs::exists(w)) {
        inputs.push_back(w);
    }
    return inputs;
}

template <typename Fn>
auto recorded(RunRecord& record, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const StageError& e) {
        record.fail(e);
        throw;
    }
}

void snapshot_config(const PipelineConfig& cfg) {
    stage("config", [&] {
        cfg.validate();
        fs::create_directories(cfg.output_dir);
        cfg.save(RunLayout{cfg.output_dir}.config());
        return 0;
    });
    check_input_size(cfg);
}

}  // namespace

PreparedSplit prepare_split(const PipelineConfig& cfg, const RunHooks& hooks) {
    return prepare(cfg, hooks, true).data;
}

SegmentationCheckpoint run_train_segmentation(const PipelineConfig& cfg, const RunHooks& hooks) {
    snapshot_config(cfg);
    RunRecord record("train-seg", cfg, training_inputs(cfg, false));
    return recorded(record, [&] {
        const Prepared p = prepare(cfg, hooks, true);
        write_split_lists(cfg, p.data);
        SegmentationCheckpoint ckpt = train_seg_stage(cfg, p.data, hooks, record);
        record.finish();
        return ckpt;
    });
}

ClassifierCheckpoint run_train_classifier(const PipelineConfig& cfg, const RunHooks& hooks) {
    snapshot_config(cfg);
    RunRecord record("train-clf", cfg, training_inputs(cfg, true));
    return recorded(record, [&] {
        const Backbone backbone = load_backbone(cfg);
        const Prepared p = prepare(cfg, hooks, false);
        write_split_lists(cfg, p.data);
        ClassifierCheckpoint ckpt = train_clf_stage(cfg, p.data, backbone, hooks, record);
        record.finish();
        return ckpt;
    });
}

TrainingResult run_training(const PipelineConfig& cfg, const RunHooks& hooks) {
    snapshot_config(cfg);
    RunRecord record("train", cfg, training_inputs(cfg, true));
    return recorded(record, [&] {
        // Weights are checked before the long segmentation stage.
        const Backbone backbone = load_backbone(cfg);
        const Prepared p = prepare(cfg, hooks, true);
        write_split_lists(cfg, p.data);
        SegmentationCheckpoint seg = train_seg_stage(cfg, p.data, hooks, record);
        ClassifierCheckpoint clf = train_clf_stage(cfg, p.data, backbone, hooks, record);
        record.finish();
        return TrainingResult{std::move(seg), std::move(clf)};
    });
}

PreprocessOptions checked_preprocess(const SegmentationCheckpoint& seg, const ClassifierCheckpoint& clf) {
    if (!seg.metadata.contains("preprocess")) {
        throw StageError("checkpoint", "segmentation checkpoint has no preprocessing record");
    }
    const PreprocessOptions opts = preprocess_from_json(seg.metadata.at("preprocess"));
    if (clf.metadata.contains("preprocess")) {
        const std::string clf_mode = clf.metadata.at("preprocess").at("mode").get<std::string>();
        if (clf_mode != to_string(opts.mode)) {
            throw StageError("checkpoint", "preprocessing mismatch: segmentation checkpoint uses " +
                                               std::string(to_string(opts.mode)) + ", classifier checkpoint uses " +
                                               clf_mode);
        }
    }
    if (seg.model.config().input_size != kInputSize) {
        throw StageError("checkpoint", "segmentation input size must be " + std::to_string(kInputSize));
    }
    return opts;
}

std::vector<PredictionResult> run_inference(const std::vector<fs::path>& inputs, const SegmentationCheckpoint& seg,
                                            const ClassifierCheckpoint& clf, const Backbone& backbone,
                                            const InferenceOptions& options) {
    const PreprocessOptions pre = checked_preprocess(seg, clf);
    if (backbone.kind() != clf.backbone || backbone.weights_digest() != clf.backbone_digest) {
        throw StageError("checkpoint", "classifier was trained with a different backbone (" +
                                           std::string(to_string(clf.backbone)) + ")");
    }
    fs::path mask_dir, overlay_dir;
    if (options.output_dir) {
        mask_dir = *options.output_dir / "masks";
        overlay_dir = *options.output_dir / "overlays";
        fs::create_directories(mask_dir);
        if (options.overlays) {
            fs::create_directories(overlay_dir);
        }
    }
    std::set<std::string> used;
    std::vector<PredictionResult> results;
    results.reserve(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        PredictionResult r;
        r.input = inputs[i];
        r.id = inputs[i].stem().string();
        if (!used.insert(r.id).second) {
            r.id += "_" + std::to_string(i);
            used.insert(r.id);
        }
        try {
            auto t = std::chrono::steady_clock::now();
            const ImageTensor raw = read_image(inputs[i]);
            r.timing.load_ms = ms_since(t);

            t = std::chrono::steady_clock::now();
            const ImageTensor input = preprocess_image(raw, pre);
            r.timing.preprocess_ms = ms_since(t);

            t = std::chrono::steady_clock::now();
            r.probability = predict_mask(seg, input);
            r.binary = binarize(r.probability);
            r.timing.segment_ms = ms_since(t);

            t = std::chrono::steady_clock::now();
            r.probs = predict_class(clf, backbone, r.probability);
            r.label = r.probs.argmax();
            r.timing.classify_ms = ms_since(t);

            if (options.output_dir) {
                r.mask_file = mask_dir / (r.id + "_mask.png");
                r.probability_file = mask_dir / (r.id + "_prob.png");
                write_mask(r.mask_file, r.binary);
                write_mask(r.probability_file, r.probability);
                if (options.overlays) {
                    r.overlay_file = overlay_dir / (r.id + "_overlay.png");
                    write_overlay(r.overlay_file, raw, r.binary);
                }
            }
            r.ok = true;
        } catch (const std::exception& e) {
            r.ok = false;
            r.error = e.what();
        }
        results.push_back(std::move(r));
    }
    return results;
}

void write_results_table(const fs::path& csv_path, const std::vector<PredictionResult>& results) {
    std::ofstream out(csv_path);
    if (!out) {
        throw std::runtime_error("cannot write " + csv_path.string());
    }
    out << "id,input,status,label,p_benign,p_malignant,p_normal,mask_file,load_ms,preprocess_ms,segment_ms,"
           "classify_ms,error\n";
    out << std::setprecision(6);
    for (const auto& r : results) {
        std::string err = r.error;
        for (char& c : err) {
            if (c == '"') c = '\'';
        }
        out << '"' << r.id << "\",\"" << r.input.string() << "\"," << (r.ok ? "ok" : "error") << ','
            << (r.ok ? std::string(to_string(r.label)) : "") << ',' << r.probs.p[0] << ',' << r.probs.p[1] << ','
            << r.probs.p[2] << ",\"" << r.mask_file.string() << "\"," << r.timing.load_ms << ','
            << r.timing.preprocess_ms << ',' << r.timing.segment_ms << ',' << r.timing.classify_ms << ",\"" << err
            << "\"\n";
    }
}

nlohmann::json results_to_json(const std::vector<PredictionResult>& results) {
    auto arr = nlohmann::json::array();
    for (const auto& r : results) {
        nlohmann::json j = {{"id", r.id}, {"input", r.input.string()}, {"ok", r.ok}};
        if (r.ok) {
            j["label"] = std::string(to_string(r.label));
            j["probabilities"] = {{"benign", r.probs.p[0]}, {"malignant", r.probs.p[1]}, {"normal", r.probs.p[2]}};
            j["mask_file"] = r.mask_file.string();
            j["probability_file"] = r.probability_file.string();
            j["overlay_file"] = r.overlay_file.string();
            j["timing_ms"] = {{"load", r.timing.load_ms}, {"preprocess", r.timing.preprocess_ms},
                              {"segment", r.timing.segment_ms}, {"classify", r.timing.classify_ms}};
        } else {
            j["error"] = r.error;
        }
        arr.push_back(std::move(j));
    }
    return arr;
}

ClassificationEvaluation run_evaluation(const PipelineConfig& cfg, const SegmentationCheckpoint& seg,
                                        const ClassifierCheckpoint& clf, const Backbone& backbone) {
    const PreprocessOptions pre = checked_preprocess(seg, clf);
    const DatasetIndex index = stage("scan", [&] { return scan_dataset(cfg.dataset_root); });
    const DatasetSplit split = stage("split", [&] { return split_holdout(index, cfg.split_ratio, cfg.split_seed); });
    return stage("evaluate", [&] {
        std::vector<UltrasoundSample> test;
        for (const auto& r : split.test) {
            test.push_back(load_sample(r));
        }
        return classification_report(clf, backbone, seg, pre, test);
    });
}

nlohmann::json version_info() {
    return {{"busdx", kVersion},
            {"opencv", CV_VERSION},
            {"openblas", openblas_get_config()},
            {"openssl", OpenSSL_version(OPENSSL_VERSION)},
            {"compiler", __VERSION__}};
}

nlohmann::json make_run_manifest(const std::string& command, const PipelineConfig& cfg,
                                 const std::vector<fs::path>& inputs) {
    nlohmann::json j;
    j["command"] = command;
    j["started"] = utc_now();
    j["config_sha256"] = sha256_hex(cfg.to_text());
    j["config"] = nlohmann::json::object();
    for (const auto& [k, v] : cfg.entries()) {
        j["config"][k] = v;
    }
    auto files = nlohmann::json::array();
    for (const auto& p : inputs) {
        nlohmann::json f = {{"path", p.string()}};
        try {
            f["sha256"] = sha256_file(p);
        } catch (const std::exception& e) {
            f["error"] = e.what();
        }
        files.push_back(std::move(f));
    }
    j["inputs"] = std::move(files);
    j["versions"] = version_info();
    return j;
}

void write_run_manifest(const fs::path& path, const nlohmann::json& manifest) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) {
            throw std::runtime_error("cannot write " + tmp.string());
        }
        out << manifest.dump(2) << '\n';
    }
    fs::rename(tmp, path);
}

}  // namespace busdx
