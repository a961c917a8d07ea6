#include "busdx/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>
#include <regex>
#include <sstream>

#include <json.hpp>

namespace busdx {

namespace fs = std::filesystem;

std::string_view to_string(ClassLabel label) {
    switch (label) {
        case ClassLabel::Benign: return "benign";
        case ClassLabel::Malignant: return "malignant";
        case ClassLabel::Normal: return "normal";
    }
    return "unknown";
}

std::optional<ClassLabel> parse_label(std::string_view text) {
    std::string lower(text);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    for (ClassLabel c : kAllClasses) {
        if (lower == to_string(c)) {
            return c;
        }
    }
    return std::nullopt;
}

ClassLabel label_from_index(int index) {
    if (index < 0 || index >= kNumClasses) {
        throw std::out_of_range("class index out of range: " + std::to_string(index));
    }
    return static_cast<ClassLabel>(index);
}

namespace {

std::string join_problems(const std::vector<std::string>& problems) {
    std::ostringstream os;
    os << "dataset has " << problems.size() << " problem(s)";
    for (const auto& p : problems) {
        os << "\n  " << p;
    }
    return os.str();
}

struct CaseFiles {
    std::optional<fs::path> raw;
    std::vector<std::pair<int, fs::path>> masks;  // (mask ordinal, path); plain _mask is 0
};

}  // namespace

DatasetError::DatasetError(std::vector<std::string> problems)
    : std::runtime_error(join_problems(problems)), problems_(std::move(problems)) {}

DatasetIndex make_index(std::vector<SampleRecord> records) {
    DatasetIndex index;
    index.records = std::move(records);
    for (const auto& r : index.records) {
        ++index.class_counts[r.label];
    }
    return index;
}

DatasetIndex scan_dataset(const fs::path& root, const ScanOptions& options) {
    if (!fs::is_directory(root)) {
        throw std::runtime_error("dataset root is not a directory: " + root.string());
    }
    static const std::regex pattern(R"(^(.+) \((\d+)\)(_mask(?:_(\d+))?)?\.png$)", std::regex::icase);

    std::vector<fs::path> class_dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory() && parse_label(entry.path().filename().string())) {
            class_dirs.push_back(entry.path());
        }
    }
    std::sort(class_dirs.begin(), class_dirs.end(), [](const fs::path& a, const fs::path& b) {
        return index_of(*parse_label(a.filename().string())) < index_of(*parse_label(b.filename().string()));
    });

    std::vector<SampleRecord> records;
    std::vector<std::string> problems;
    for (const auto& dir : class_dirs) {
        const ClassLabel label = *parse_label(dir.filename().string());
        std::map<std::pair<std::string, int>, CaseFiles> cases;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (!entry.is_regular_file()) {
                continue;
            }
            const std::string name = entry.path().filename().string();
            std::smatch m;
            if (!std::regex_match(name, m, pattern)) {
                continue;
            }
            auto key = std::make_pair(m[1].str(), std::stoi(m[2].str()));
            CaseFiles& files = cases[key];
            if (m[3].matched) {
                const int ordinal = m[4].matched ? std::stoi(m[4].str()) + 1 : 0;
                files.masks.emplace_back(ordinal, entry.path());
            } else {
                files.raw = entry.path();
            }
        }

        std::vector<std::pair<std::pair<std::string, int>, CaseFiles>> ordered(cases.begin(), cases.end());
        std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
            return a.first.second != b.first.second ? a.first.second < b.first.second
                                                    : a.first.first < b.first.first;
        });
        for (auto& [key, files] : ordered) {
            const std::string id = key.first + " (" + std::to_string(key.second) + ")";
            if (!files.raw) {
                problems.push_back("mask without raw image: " + files.masks.front().second.string());
                continue;
            }
            if (files.masks.empty()) {
                problems.push_back("raw image without mask: " + files.raw->string());
                continue;
            }
            std::sort(files.masks.begin(), files.masks.end());
            SampleRecord rec;
            rec.id = id;
            rec.raw_path = *files.raw;
            rec.label = label;
            for (auto& [ordinal, path] : files.masks) {
                rec.mask_paths.push_back(path);
            }
            records.push_back(std::move(rec));
        }
    }

    if (options.verify_decode) {
        for (const auto& rec : records) {
            try {
                load_sample(rec);
            } catch (const std::exception& e) {
                problems.emplace_back(e.what());
            }
        }
    }
    if (!problems.empty()) {
        throw DatasetError(std::move(problems));
    }
    return make_index(std::move(records));
}

UltrasoundSample load_sample(const SampleRecord& record) {
    UltrasoundSample sample;
    sample.id = record.id;
    sample.label = record.label;
    sample.image = read_image(record.raw_path);
    sample.source_height = sample.image.height;
    sample.source_width = sample.image.width;
    sample.mask = MaskTensor(sample.image.height, sample.image.width, 0.0f);
    for (const auto& path : record.mask_paths) {
        MaskTensor m = read_mask(path);
        if (m.height != sample.image.height || m.width != sample.image.width) {
            throw std::runtime_error("mask size " + std::to_string(m.width) + "x" + std::to_string(m.height) +
                                     " does not match raw image " + std::to_string(sample.image.width) + "x" +
                                     std::to_string(sample.image.height) + ": " + path.string());
        }
        for (std::size_t i = 0; i < m.values.size(); ++i) {
            sample.mask.values[i] = std::max(sample.mask.values[i], m.values[i]);
        }
    }
    return sample;
}

DatasetSplit split_holdout(const DatasetIndex& index, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) {
        throw std::invalid_argument("split ratio must lie in (0,1), got " + std::to_string(ratio));
    }
    std::vector<std::size_t> order(index.records.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(order.size())));
    DatasetSplit split;
    split.ratio = ratio;
    split.seed = seed;
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < n_train ? split.train : split.test).push_back(index.records[order[i]]);
    }
    return split;
}

void write_manifest(const DatasetIndex& index, const fs::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write manifest: " + path.string());
    }
    for (const auto& r : index.records) {
        nlohmann::json j;
        j["id"] = r.id;
        j["label"] = std::string(to_string(r.label));
        j["raw"] = r.raw_path.string();
        auto masks = nlohmann::json::array();
        for (const auto& m : r.mask_paths) {
            masks.push_back(m.string());
        }
        j["masks"] = masks;
        out << j.dump() << '\n';
    }
}

DatasetIndex read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read manifest: " + path.string());
    }
    std::vector<SampleRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const auto j = nlohmann::json::parse(line);
        SampleRecord r;
        r.id = j.at("id").get<std::string>();
        const auto label = parse_label(j.at("label").get<std::string>());
        if (!label) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": unknown label");
        }
        r.label = *label;
        r.raw_path = j.at("raw").get<std::string>();
        for (const auto& m : j.at("masks")) {
            r.mask_paths.emplace_back(m.get<std::string>());
        }
        records.push_back(std::move(r));
    }
    return make_index(std::move(records));
}

}  // namespace busdx
