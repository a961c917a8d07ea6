#include <doctest.h>

#include <algorithm>
#include <set>

#include "busdx/dataset.hpp"
#include "synthetic.hpp"

using namespace busdx;
using busdx::testing::TempDir;

namespace {

void write_png(const std::filesystem::path& p, const cv::Mat& m) {
    std::filesystem::create_directories(p.parent_path());
    REQUIRE(cv::imwrite(p.string(), m));
}

DatasetIndex synthetic_index(std::size_t n) {
    std::vector<SampleRecord> records;
    for (std::size_t i = 0; i < n; ++i) {
        SampleRecord r;
        r.label = label_from_index(static_cast<int>(i % 3));
        r.id = std::string(to_string(r.label)) + " (" + std::to_string(i + 1) + ")";
        r.raw_path = r.id + ".png";
        records.push_back(r);
    }
    return make_index(records);
}

}  // namespace

TEST_CASE("class labels have a stable encoding") {
    CHECK(index_of(ClassLabel::Benign) == 0);
    CHECK(index_of(ClassLabel::Malignant) == 1);
    CHECK(index_of(ClassLabel::Normal) == 2);
    CHECK(parse_label("Malignant") == ClassLabel::Malignant);
    CHECK_FALSE(parse_label("cyst").has_value());
    CHECK_THROWS(label_from_index(3));
}

TEST_CASE("scan pairs raw images with every mask and orders numerically") {
    TempDir tmp("scan");
    busdx::testing::write_dataset(tmp.path, {12, 3, 2});
    // second annotation for benign (1)
    const cv::Mat extra = cv::Mat::zeros(150, 180, CV_8UC1);
    write_png(tmp.path / "benign" / "benign (1)_mask_1.png", extra);

    const DatasetIndex idx = scan_dataset(tmp.path);
    REQUIRE(idx.records.size() == 17);
    CHECK(idx.class_counts.at(ClassLabel::Benign) == 12);
    CHECK(idx.class_counts.at(ClassLabel::Malignant) == 3);
    CHECK(idx.class_counts.at(ClassLabel::Normal) == 2);
    CHECK(idx.records[0].id == "benign (1)");
    CHECK(idx.records[0].mask_paths.size() == 2);
    CHECK(idx.records[1].id == "benign (2)");
    CHECK(idx.records[11].id == "benign (12)");
    CHECK(idx.records[12].label == ClassLabel::Malignant);

    const DatasetIndex again = scan_dataset(tmp.path);
    REQUIRE(again.records.size() == idx.records.size());
    for (std::size_t i = 0; i < idx.records.size(); ++i) {
        CHECK(again.records[i].raw_path == idx.records[i].raw_path);
    }
}

TEST_CASE("scan of an empty directory") {
    TempDir tmp("empty");
    const DatasetIndex idx = scan_dataset(tmp.path);
    CHECK(idx.records.empty());
    std::size_t total = 0;
    for (const auto& [k, v] : idx.class_counts) total += v;
    CHECK(total == 0);
}

TEST_CASE("scan reports orphans") {
    TempDir tmp("orphan");
    const auto sc = busdx::testing::make_case(ClassLabel::Benign, 1);
    write_png(tmp.path / "benign" / "benign (1).png", sc.image);
    write_png(tmp.path / "benign" / "benign (1)_mask.png", sc.mask);
    write_png(tmp.path / "benign" / "benign (2).png", sc.image);
    write_png(tmp.path / "malignant" / "malignant (4)_mask.png", sc.mask);
    try {
        scan_dataset(tmp.path);
        FAIL("expected DatasetError");
    } catch (const DatasetError& e) {
        REQUIRE(e.problems().size() == 2);
        const std::string all = e.problems()[0] + e.problems()[1];
        CHECK(all.find("benign (2).png") != std::string::npos);
        CHECK(all.find("malignant (4)_mask.png") != std::string::npos);
    }
}

TEST_CASE("load_sample merges masks by union and keeps the source size") {
    TempDir tmp("load");
    cv::Mat raw(500, 500, CV_8UC1, cv::Scalar(100));
    cv::Mat a = cv::Mat::zeros(500, 500, CV_8UC1), b = a.clone(), c = a.clone();
    cv::rectangle(a, cv::Rect(100, 100, 200, 200), cv::Scalar(255), cv::FILLED);
    cv::rectangle(b, cv::Rect(150, 150, 50, 50), cv::Scalar(255), cv::FILLED);  // inside a
    write_png(tmp.path / "benign" / "benign (1).png", raw);
    write_png(tmp.path / "benign" / "benign (1)_mask.png", a);
    write_png(tmp.path / "benign" / "benign (1)_mask_1.png", b);
    write_png(tmp.path / "normal" / "normal (1).png", raw);
    write_png(tmp.path / "normal" / "normal (1)_mask.png", c);

    const DatasetIndex idx = scan_dataset(tmp.path);
    REQUIRE(idx.records.size() == 2);
    const UltrasoundSample s = load_sample(idx.records[0]);
    CHECK(s.source_height == 500);
    CHECK(s.source_width == 500);
    CHECK(s.image.channels == 3);
    CHECK(s.image.at(0, 0, 0) == doctest::Approx(100.0 / 255.0));
    CHECK(s.image.at(0, 0, 2) == s.image.at(0, 0, 0));
    double sum = 0;
    for (float v : s.mask.values) {
        CHECK((v == 0.0f || v == 1.0f));
        sum += v;
    }
    CHECK(sum == 200.0 * 200.0);

    const UltrasoundSample n = load_sample(idx.records[1]);
    CHECK(std::all_of(n.mask.values.begin(), n.mask.values.end(), [](float v) { return v == 0.0f; }));
}

TEST_CASE("load_sample rejects mismatched mask size and unreadable files") {
    TempDir tmp("mismatch");
    write_png(tmp.path / "benign" / "benign (1).png", cv::Mat(100, 100, CV_8UC1, cv::Scalar(9)));
    write_png(tmp.path / "benign" / "benign (1)_mask.png", cv::Mat::zeros(90, 100, CV_8UC1));
    const DatasetIndex idx = scan_dataset(tmp.path);
    CHECK_THROWS(load_sample(idx.records.at(0)));

    SampleRecord bad = idx.records.at(0);
    bad.raw_path = tmp.path / "nope.png";
    try {
        load_sample(bad);
        FAIL("expected an error");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("nope.png") != std::string::npos);
    }
}

TEST_CASE("hold-out split partitions the records deterministically") {
    const DatasetIndex idx = synthetic_index(780);
    const DatasetSplit s = split_holdout(idx, 0.8, 15);
    CHECK(s.train.size() == 624);
    CHECK(s.test.size() == 156);

    std::set<std::string> ids;
    for (const auto& r : s.train) ids.insert(r.id);
    for (const auto& r : s.test) ids.insert(r.id);
    CHECK(ids.size() == 780);

    const DatasetSplit again = split_holdout(idx, 0.8, 15);
    for (std::size_t i = 0; i < s.test.size(); ++i) {
        CHECK(again.test[i].id == s.test[i].id);
    }
    const DatasetSplit other = split_holdout(idx, 0.8, 16);
    bool differs = false;
    for (std::size_t i = 0; i < s.test.size(); ++i) {
        differs = differs || other.test[i].id != s.test[i].id;
    }
    CHECK(differs);

    CHECK(split_holdout(synthetic_index(7), 0.5, 1).train.size() == 4);  // round half away from zero
    CHECK_THROWS_AS(split_holdout(idx, 0.0, 15), std::invalid_argument);
    CHECK_THROWS_AS(split_holdout(idx, 1.0, 15), std::invalid_argument);
}

TEST_CASE("manifest round trip") {
    TempDir tmp("manifest");
    busdx::testing::write_dataset(tmp.path / "data", {2, 2, 1});
    const DatasetIndex idx = scan_dataset(tmp.path / "data");
    write_manifest(idx, tmp.path / "m.jsonl");
    const DatasetIndex back = read_manifest(tmp.path / "m.jsonl");
    REQUIRE(back.records.size() == idx.records.size());
    for (std::size_t i = 0; i < idx.records.size(); ++i) {
        CHECK(back.records[i].id == idx.records[i].id);
        CHECK(back.records[i].label == idx.records[i].label);
        CHECK(back.records[i].raw_path == idx.records[i].raw_path);
        CHECK(back.records[i].mask_paths == idx.records[i].mask_paths);
    }
}
