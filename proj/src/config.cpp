#include "busdx/config.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace busdx {
namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
    std::array<char, 64> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), end);
}

std::string fmt(bool v) { return v ? "true" : "false"; }

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
    throw std::invalid_argument("config: invalid value '" + value + "' for key '" + key + "'");
}

double to_double(const std::string& key, const std::string& value) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        bad_value(key, value);
    }
    return v;
}

template <typename Int>
Int to_int(const std::string& key, const std::string& value) {
    Int v{};
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        bad_value(key, value);
    }
    return v;
}

bool to_bool(const std::string& key, const std::string& value) {
    std::string v = value;
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    bad_value(key, value);
}

std::string join_ints(const std::vector<int>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        out += (i ? "," : "") + std::to_string(xs[i]);
    }
    return out;
}

std::vector<int> split_ints(const std::string& key, const std::string& value) {
    std::vector<int> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(to_int<int>(key, trim(item)));
    }
    return out;
}

}  // namespace

void PipelineConfig::set(const std::string& key, const std::string& raw) {
    const std::string value = trim(raw);
    auto& s = preprocess.slic;
    auto& k = preprocess.kmeans;
    if (key == "dataset.root") dataset_root = value;
    else if (key == "split.ratio") split_ratio = to_double(key, value);
    else if (key == "split.seed") split_seed = to_int<std::uint64_t>(key, value);
    else if (key == "preprocess.mode") {
        const auto m = parse_preprocess_mode(value);
        if (!m) bad_value(key, value);
        preprocess.mode = *m;
    }
    else if (key == "preprocess.seed") preprocess.seed = to_int<std::uint64_t>(key, value);
    else if (key == "slic.region_size") s.region_size = to_int<int>(key, value);
    else if (key == "slic.ruler") s.ruler = to_double(key, value);
    else if (key == "slic.iterations") s.iterations = to_int<int>(key, value);
    else if (key == "slic.enforce_connectivity") s.enforce_connectivity = to_bool(key, value);
    else if (key == "kmeans.k") k.k = to_int<int>(key, value);
    else if (key == "kmeans.max_iterations") k.max_iterations = to_int<int>(key, value);
    else if (key == "kmeans.epsilon") k.epsilon = to_double(key, value);
    else if (key == "unet.input_size") unet.input_size = to_int<int>(key, value);
    else if (key == "unet.input_channels") unet.input_channels = to_int<int>(key, value);
    else if (key == "unet.depth") unet.depth = to_int<int>(key, value);
    else if (key == "unet.base_filters") unet.base_filters = to_int<int>(key, value);
    else if (key == "unet.learning_rate") unet.learning_rate = to_double(key, value);
    else if (key == "unet.epochs") unet.epochs = to_int<int>(key, value);
    else if (key == "unet.batch_size") unet.batch_size = to_int<int>(key, value);
    else if (key == "unet.seed") unet.seed = to_int<std::uint64_t>(key, value);
    else if (key == "unet.selection") {
        const auto c = parse_selection(value);
        if (!c) bad_value(key, value);
        unet.selection = *c;
    }
    else if (key == "backbone") {
        const auto b = parse_backbone(value);
        if (!b) bad_value(key, value);
        backbone = *b;
    }
    else if (key == "weights_dir") weights_dir = value;
    else if (key == "head.dense_widths") head.dense_widths = split_ints(key, value);
    else if (key == "head.dropout_rate") head.dropout_rate = to_double(key, value);
    else if (key == "head.learning_rate") head.learning_rate = to_double(key, value);
    else if (key == "head.epochs") head.epochs = to_int<int>(key, value);
    else if (key == "head.batch_size") head.batch_size = to_int<int>(key, value);
    else if (key == "head.seed") head.seed = to_int<std::uint64_t>(key, value);
    else if (key == "output_dir") output_dir = value;
    else throw std::invalid_argument("config: unknown key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> PipelineConfig::entries() const {
    const auto& s = preprocess.slic;
    const auto& k = preprocess.kmeans;
    return {
        {"dataset.root", dataset_root.string()},
        {"split.ratio", fmt(split_ratio)},
        {"split.seed", std::to_string(split_seed)},
        {"preprocess.mode", std::string(to_string(preprocess.mode))},
        {"preprocess.seed", std::to_string(preprocess.seed)},
        {"slic.region_size", std::to_string(s.region_size)},
        {"slic.ruler", fmt(s.ruler)},
        {"slic.iterations", std::to_string(s.iterations)},
        {"slic.enforce_connectivity", fmt(s.enforce_connectivity)},
        {"kmeans.k", std::to_string(k.k)},
        {"kmeans.max_iterations", std::to_string(k.max_iterations)},
        {"kmeans.epsilon", fmt(k.epsilon)},
        {"unet.input_size", std::to_string(unet.input_size)},
        {"unet.input_channels", std::to_string(unet.input_channels)},
        {"unet.depth", std::to_string(unet.depth)},
        {"unet.base_filters", std::to_string(unet.base_filters)},
        {"unet.learning_rate", fmt(unet.learning_rate)},
        {"unet.epochs", std::to_string(unet.epochs)},
        {"unet.batch_size", std::to_string(unet.batch_size)},
        {"unet.seed", std::to_string(unet.seed)},
        {"unet.selection", to_string(unet.selection)},
        {"backbone", std::string(to_string(backbone))},
        {"weights_dir", weights_dir.string()},
        {"head.dense_widths", join_ints(head.dense_widths)},
        {"head.dropout_rate", fmt(head.dropout_rate)},
        {"head.learning_rate", fmt(head.learning_rate)},
        {"head.epochs", std::to_string(head.epochs)},
        {"head.batch_size", std::to_string(head.batch_size)},
        {"head.seed", std::to_string(head.seed)},
        {"output_dir", output_dir.string()},
    };
}

std::string PipelineConfig::to_text() const {
    std::ostringstream os;
    for (const auto& [key, value] : entries()) {
        os << key << " = " << value << '\n';
    }
    return os.str();
}

PipelineConfig PipelineConfig::parse(const std::string& text) {
    PipelineConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
        }
        cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    }
    return cfg;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read config " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

void PipelineConfig::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write config " + path.string());
    }
    out << to_text();
}

void PipelineConfig::validate() const {
    if (!(split_ratio > 0.0 && split_ratio < 1.0)) {
        throw std::invalid_argument("config: split.ratio must be in (0, 1)");
    }
    preprocess.slic.validate();
    if (preprocess.kmeans.k < 1 || preprocess.kmeans.max_iterations < 1 || preprocess.kmeans.epsilon < 0.0) {
        throw std::invalid_argument("config: kmeans.k and kmeans.max_iterations must be >= 1, kmeans.epsilon >= 0");
    }
    unet.validate();
    head.validate();
}

nlohmann::json preprocess_to_json(const PreprocessOptions& o) {
    return {{"mode", std::string(to_string(o.mode))},
            {"seed", o.seed},
            {"slic",
             {{"region_size", o.slic.region_size},
              {"ruler", o.slic.ruler},
              {"iterations", o.slic.iterations},
              {"enforce_connectivity", o.slic.enforce_connectivity}}},
            {"kmeans", {{"k", o.kmeans.k}, {"max_iterations", o.kmeans.max_iterations}, {"epsilon", o.kmeans.epsilon}}}};
}

PreprocessOptions preprocess_from_json(const nlohmann::json& j) {
    PreprocessOptions o;
    const auto mode = parse_preprocess_mode(j.at("mode").get<std::string>());
    if (!mode) {
        throw std::runtime_error("unknown preprocess mode in metadata");
    }
    o.mode = *mode;
    o.seed = j.at("seed").get<std::uint64_t>();
    const auto& s = j.at("slic");
    o.slic.region_size = s.at("region_size").get<int>();
    o.slic.ruler = s.at("ruler").get<double>();
    o.slic.iterations = s.at("iterations").get<int>();
    o.slic.enforce_connectivity = s.at("enforce_connectivity").get<bool>();
    const auto& k = j.at("kmeans");
    o.kmeans.k = k.at("k").get<int>();
    o.kmeans.max_iterations = k.at("max_iterations").get<int>();
    o.kmeans.epsilon = k.at("epsilon").get<double>();
    return o;
}

}  // namespace busdx
