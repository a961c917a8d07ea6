// Command-line front end: training, inference, evaluation and reporting.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "busdx/pipeline.hpp"

using namespace busdx;
namespace fs = std::filesystem;

namespace {

struct Overrides {
    fs::path config;
    std::vector<std::pair<std::string, std::string>> keys;
    std::vector<std::string> sets;
    std::string out;
    std::string seed;
};

// Flag name -> config key. Values are parsed by PipelineConfig::set.
const std::vector<std::pair<std::string, std::string>> kFlagKeys{
    {"--dataset", "dataset.root"},           {"--preprocess", "preprocess.mode"},
    {"--slic-region-size", "slic.region_size"}, {"--slic-ruler", "slic.ruler"},
    {"--slic-iters", "slic.iterations"},     {"--kmeans-k", "kmeans.k"},
    {"--kmeans-eps", "kmeans.epsilon"},      {"--backbone", "backbone"},
    {"--weights-dir", "weights_dir"},        {"--seg-epochs", "unet.epochs"},
    {"--clf-epochs", "head.epochs"},         {"--base-filters", "unet.base_filters"},
};

struct FlagValues {
    std::map<std::string, std::string> values;
};

void add_config_flags(CLI::App* cmd, Overrides& o, FlagValues& f) {
    cmd->add_option("--config", o.config, "key=value config file")->check(CLI::ExistingFile);
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--seed", o.seed, "seed for preprocessing, U-Net and head");
    for (const auto& [flag, key] : kFlagKeys) {
        cmd->add_option(flag, f.values[flag], "sets " + key);
    }
    cmd->add_option("--set", o.sets, "override any config key (key=value)");
}

PipelineConfig resolve_config(const Overrides& o, const FlagValues& f, bool apply_out) {
    PipelineConfig cfg = o.config.empty() ? PipelineConfig{} : PipelineConfig::load(o.config);
    for (const auto& [flag, key] : kFlagKeys) {
        const auto it = f.values.find(flag);
        if (it != f.values.end() && !it->second.empty()) cfg.set(key, it->second);
    }
    if (!o.seed.empty()) {
        for (const char* key : {"preprocess.seed", "unet.seed", "head.seed"}) cfg.set(key, o.seed);
    }
    for (const auto& s : o.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + s + "'");
        cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    if (apply_out && !o.out.empty()) cfg.output_dir = o.out;
    cfg.validate();
    return cfg;
}

RunHooks console_hooks() {
    RunHooks h;
    h.log = [](const std::string& m) { std::cerr << m << '\n'; };
    h.on_seg_epoch = [](const SegEpochMetrics& m) {
        std::fprintf(stderr, "seg epoch %d  bce %.4f  dice %.4f  val_bce %.4f  val_dice %.4f\n", m.epoch, m.train_bce,
                     m.train_dice, m.val_bce, m.val_dice);
        return true;
    };
    h.on_clf_epoch = [](const ClfEpochMetrics& m) {
        std::fprintf(stderr, "clf epoch %d  loss %.4f  acc %.4f  val_loss %.4f  val_acc %.4f\n", m.epoch,
                     m.train_loss, m.train_accuracy, m.val_loss, m.val_accuracy);
        return true;
    };
    return h;
}

struct Checkpoints {
    std::string seg, clf;
};

void add_checkpoint_flags(CLI::App* cmd, Checkpoints& c) {
    cmd->add_option("--seg-ckpt", c.seg, "segmentation checkpoint (default <output_dir>/segmentation.busdx)");
    cmd->add_option("--clf-ckpt", c.clf, "classifier checkpoint (default <output_dir>/classifier.busdx)");
}

std::pair<fs::path, fs::path> checkpoint_paths(const Checkpoints& c, const PipelineConfig& cfg) {
    const RunLayout layout{cfg.output_dir};
    return {c.seg.empty() ? layout.seg_checkpoint() : fs::path(c.seg),
            c.clf.empty() ? layout.clf_checkpoint() : fs::path(c.clf)};
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

// Manifest for commands that do not train: inputs, outputs and versions.
void write_command_manifest(const fs::path& out_dir, const std::string& command, const PipelineConfig& cfg,
                            const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
    nlohmann::json m = make_run_manifest(command, cfg, inputs);
    m["artifacts"] = nlohmann::json::array();
    for (const auto& p : outputs) {
        m["artifacts"].push_back({{"path", fs::relative(p, out_dir).string()}, {"sha256", sha256_file(p)}});
    }
    m["status"] = "complete";
    write_run_manifest(RunLayout{out_dir}.run_manifest(command), m);
}

std::vector<fs::path> expand_inputs(const std::vector<std::string>& args) {
    std::vector<fs::path> out;
    for (const auto& a : args) {
        if (!fs::is_directory(a)) {
            out.emplace_back(a);
            continue;
        }
        std::vector<fs::path> found;
        for (const auto& e : fs::directory_iterator(a)) {
            const std::string name = e.path().filename().string();
            if (e.is_regular_file() && name.find("_mask") == std::string::npos) found.push_back(e.path());
        }
        std::sort(found.begin(), found.end());
        out.insert(out.end(), found.begin(), found.end());
    }
    return out;
}

int cmd_init_weights(const std::string& backbone, const fs::path& dir, std::uint64_t seed) {
    const auto kind = parse_backbone(backbone);
    if (!kind) throw std::invalid_argument("unknown backbone '" + backbone + "'");
    fs::create_directories(dir);
    const fs::path path = backbone_weights_path(dir, *kind);
    save_container(path, make_initialized_backbone_weights(*kind, seed));
    std::cerr << "wrote randomly initialised " << backbone << " weights to " << path.string()
              << " (not ImageNet-pretrained)\n";
    return 0;
}

int cmd_predict(const PipelineConfig& cfg, const Checkpoints& c, const std::string& out,
                const std::vector<std::string>& args, bool overlays) {
    const auto [seg_path, clf_path] = checkpoint_paths(c, cfg);
    const fs::path out_dir = out.empty() ? cfg.output_dir / "predict" : fs::path(out);
    const SegmentationCheckpoint seg = SegmentationCheckpoint::load(seg_path);
    const ClassifierCheckpoint clf = ClassifierCheckpoint::load(clf_path);
    const Backbone backbone = Backbone::load(clf.backbone, cfg.weights_dir);
    const std::vector<fs::path> inputs = expand_inputs(args);
    if (inputs.empty()) throw std::invalid_argument("no input images");

    InferenceOptions opts;
    opts.output_dir = out_dir;
    opts.overlays = overlays;
    const auto results = run_inference(inputs, seg, clf, backbone, opts);

    const fs::path csv = out_dir / "results.csv", json = out_dir / "results.json";
    write_results_table(csv, results);
    write_text(json, results_to_json(results).dump(2) + "\n");
    std::vector<fs::path> outputs{csv, json};
    int failed = 0;
    for (const auto& r : results) {
        if (!r.ok) {
            ++failed;
            std::cerr << "error: " << r.error << '\n';
            continue;
        }
        std::printf("%s\t%s\t%.4f\t%.4f\t%.4f\n", r.input.string().c_str(), std::string(to_string(r.label)).c_str(),
                    r.probs.p[0], r.probs.p[1], r.probs.p[2]);
        for (const auto& f : {r.mask_file, r.probability_file, r.overlay_file}) {
            if (!f.empty()) outputs.push_back(f);
        }
    }
    std::vector<fs::path> manifest_inputs{seg_path, clf_path, backbone_weights_path(cfg.weights_dir, clf.backbone)};
    manifest_inputs.insert(manifest_inputs.end(), inputs.begin(), inputs.end());
    write_command_manifest(out_dir, "predict", cfg, manifest_inputs, outputs);
    return failed == 0 ? 0 : 3;
}

int cmd_evaluate(const PipelineConfig& cfg, const Checkpoints& c, const std::string& out) {
    const auto [seg_path, clf_path] = checkpoint_paths(c, cfg);
    const fs::path out_dir = out.empty() ? cfg.output_dir / "evaluate" : fs::path(out);
    const SegmentationCheckpoint seg = SegmentationCheckpoint::load(seg_path);
    const ClassifierCheckpoint clf = ClassifierCheckpoint::load(clf_path);
    const Backbone backbone = Backbone::load(clf.backbone, cfg.weights_dir);
    const ClassificationEvaluation ev = run_evaluation(cfg, seg, clf, backbone);

    fs::create_directories(out_dir);
    const fs::path json = out_dir / "report.json", text = out_dir / "report.txt", csv = out_dir / "per_sample.csv";
    write_text(json, ev.report.to_json().dump(2) + "\n");
    const std::string formatted = format_report(ev.report);
    write_text(text, formatted);
    write_per_sample_csv(csv, ev.samples);
    std::cout << formatted;
    write_command_manifest(out_dir, "evaluate", cfg,
                           {seg_path, clf_path, backbone_weights_path(cfg.weights_dir, clf.backbone)},
                           {json, text, csv});
    return 0;
}

int cmd_report(const std::vector<std::string>& files, const std::string& out) {
    std::vector<EvaluationReport> reports;
    std::vector<std::pair<std::string, SegmentationScores>> seg_rows;
    for (const auto& f : files) {
        std::ifstream in(f);
        if (!in) throw std::runtime_error("cannot read " + f);
        reports.push_back(EvaluationReport::from_json(nlohmann::json::parse(in)));
        if (reports.back().segmentation) seg_rows.emplace_back(reports.back().name, *reports.back().segmentation);
    }
    std::string text;
    if (!seg_rows.empty()) text += format_segmentation_table(seg_rows) + "\n";
    text += format_classification_table(reports) + "\n" + format_sd_table(reports);
    std::cout << text;
    if (!out.empty()) {
        fs::create_directories(out);
        const fs::path path = fs::path(out) / "report_tables.txt";
        write_text(path, text);
        std::vector<fs::path> inputs(files.begin(), files.end());
        write_command_manifest(out, "report", PipelineConfig{}, inputs, {path});
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Breast ultrasound segmentation and classification pipeline"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    Overrides o;
    FlagValues f;
    Checkpoints ckpt;
    std::vector<std::string> inputs;
    bool no_overlays = false;

    auto* train_seg = app.add_subcommand("train-seg", "train the segmentation network");
    auto* train_clf = app.add_subcommand("train-clf", "train the classifier head on ground-truth masks");
    auto* train = app.add_subcommand("train", "train both stages");
    auto* predict = app.add_subcommand("predict", "segment and classify images");
    auto* evaluate = app.add_subcommand("evaluate", "score checkpoints on the hold-out split");
    for (auto* cmd : {train_seg, train_clf, train, predict, evaluate}) add_config_flags(cmd, o, f);
    for (auto* cmd : {predict, evaluate}) add_checkpoint_flags(cmd, ckpt);
    predict->add_option("inputs", inputs, "image files or directories")->required();
    predict->add_flag("--no-overlays", no_overlays, "skip overlay images");

    auto* report = app.add_subcommand("report", "combine report.json files into tables");
    report->add_option("reports", inputs, "report.json files")->required()->check(CLI::ExistingFile);
    report->add_option("--out", o.out, "directory for the combined tables");

    std::string iw_backbone = "vgg16", iw_dir = "weights";
    std::uint64_t iw_seed = 15;
    auto* init_weights = app.add_subcommand("init-weights", "write randomly initialised backbone weights");
    init_weights->add_option("--backbone", iw_backbone, "vgg16, vgg19, resnet50 or densenet121");
    init_weights->add_option("--weights-dir", iw_dir, "destination directory");
    init_weights->add_option("--seed", iw_seed, "initialisation seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*init_weights) return cmd_init_weights(iw_backbone, iw_dir, iw_seed);
        if (*report) return cmd_report(inputs, o.out);
        const bool trains = *train_seg || *train_clf || *train;
        const PipelineConfig cfg = resolve_config(o, f, trains);
        if (*train_seg) run_train_segmentation(cfg, console_hooks());
        if (*train_clf) run_train_classifier(cfg, console_hooks());
        if (*train) run_training(cfg, console_hooks());
        if (trains) {
            std::cerr << "artifacts in " << cfg.output_dir.string() << '\n';
            return 0;
        }
        if (*predict) return cmd_predict(cfg, ckpt, o.out, inputs, !no_overlays);
        if (*evaluate) return cmd_evaluate(cfg, ckpt, o.out);
    } catch (const StageError& e) {
        std::cerr << "error " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
