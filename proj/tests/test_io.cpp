#include <gtest/gtest.h>

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "rangeseg/config.hpp"
#include "rangeseg/kitti_io.hpp"

namespace {

using rangeseg::LabelMap;
using rangeseg::PointCloud;

std::string temp_path(const std::string& name) { return testing::TempDir() + name; }

void write_bytes(const std::string& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

nlohmann::json valid_config_json() {
    nlohmann::json j;
    j["version"] = 1;
    j["projection"] = {{"height", 16}, {"width", 64}, {"fov_up_deg", 3.0}, {"fov_down_deg", -25.0}};
    j["model"] = {{"in_channels", 5}, {"num_classes", 3},  {"stage_blocks", {1, 1, 1, 1}},
                  {"stage_widths", {4, 6, 6, 8}}, {"decoder_width", 4}, {"msca_local", 3},
                  {"msca_branches", {3}}};
    j["loss"] = {{"ignore_class", 0}, {"boundary_theta0", 3}, {"eps", 1e-7},
                 {"w_wce", 1.0}, {"w_lovasz", 1.5}, {"w_boundary", 1.0},
                 {"aux_weights", {1.0, 1.0, 0.5}}, {"class_freqs", {0.5, 0.3, 0.2}}};
    j["knn"] = {{"k", 5}, {"window", 5}, {"range_cutoff", 1.0}, {"gaussian_sigma", 1.0}};
    j["labels"] = {{"class_names", {"void", "a", "b"}},
                   {"train_to_raw", {0, 10, 20}},
                   {"raw_to_train", {{"0", 0}, {"10", 1}, {"20", 2}, {"30", 2}}}};
    return j;
}

TEST(ScanIo, RoundTripIsByteExact) {
    PointCloud cloud;
    cloud.points = {{1.5f, -2.25f, 0.125f, 0.7f}, {0.f, 3.f, -4.f, 0.f}, {9.f, 9.f, 9.f, 1.f}};
    const std::string path = temp_path("scan_roundtrip.bin");
    rangeseg::write_scan(path, cloud);

    const rangeseg::ScanData back = rangeseg::read_scan(path);
    EXPECT_EQ(back.rejected_nonfinite, 0u);
    ASSERT_EQ(back.cloud.points.size(), cloud.points.size());
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
        EXPECT_EQ(back.cloud.points[i].x, cloud.points[i].x);
        EXPECT_EQ(back.cloud.points[i].y, cloud.points[i].y);
        EXPECT_EQ(back.cloud.points[i].z, cloud.points[i].z);
        EXPECT_EQ(back.cloud.points[i].remission, cloud.points[i].remission);
    }
}

TEST(ScanIo, DropsNonFinitePoints) {
    const float nan = std::numeric_limits<float>::quiet_NaN();
    const float inf = std::numeric_limits<float>::infinity();
    PointCloud cloud;
    cloud.points = {{1.f, 2.f, 3.f, 0.5f}, {nan, 0.f, 0.f, 0.f}, {0.f, inf, 0.f, 0.f},
                    {4.f, 5.f, 6.f, 0.1f}};
    const std::string path = temp_path("scan_nonfinite.bin");
    rangeseg::write_scan(path, cloud);

    const rangeseg::ScanData back = rangeseg::read_scan(path);
    EXPECT_EQ(back.rejected_nonfinite, 2u);
    ASSERT_EQ(back.cloud.points.size(), 2u);
    EXPECT_EQ(back.cloud.points[1].x, 4.f);
}

TEST(ScanIo, RejectsMissingTruncatedAndEmptyFiles) {
    EXPECT_THROW(
        {
            try {
                rangeseg::read_scan(temp_path("nope.bin"));
            } catch (const std::runtime_error& e) {
                EXPECT_NE(std::string(e.what()).find("nope.bin"), std::string::npos);
                throw;
            }
        },
        std::runtime_error);

    const std::string truncated = temp_path("scan_truncated.bin");
    write_bytes(truncated, std::vector<char>(23, 0));
    EXPECT_THROW(
        {
            try {
                rangeseg::read_scan(truncated);
            } catch (const std::runtime_error& e) {
                EXPECT_NE(std::string(e.what()).find("multiple of 16"), std::string::npos);
                throw;
            }
        },
        std::runtime_error);

    const std::string empty = temp_path("scan_empty.bin");
    write_bytes(empty, {});
    EXPECT_THROW(rangeseg::read_scan(empty), std::runtime_error);
}

TEST(LabelIo, RoundTripAndBitLayout) {
    const std::vector<std::uint32_t> labels{0x00010009u, 0x00000028u, 0xffff0001u};
    const std::string path = temp_path("labels_roundtrip.label");
    rangeseg::write_labels(path, labels);
    EXPECT_EQ(rangeseg::read_labels(path), labels);

    EXPECT_EQ(rangeseg::semantic_id(0x00010009u), 9u);
    EXPECT_EQ(rangeseg::instance_id(0x00010009u), 1u);
    EXPECT_EQ(rangeseg::semantic_id(0xffff0001u), 1u);
    EXPECT_EQ(rangeseg::instance_id(0xffff0001u), 0xffffu);

    const std::string odd = temp_path("labels_odd.label");
    write_bytes(odd, std::vector<char>(6, 0));
    EXPECT_THROW(rangeseg::read_labels(odd), std::runtime_error);
}

TEST(LabelMapTest, RemapUsesSemanticBitsAndCountsUnmapped) {
    LabelMap map;
    map.train_to_raw = {0, 10, 20};
    map.raw_to_train = {{0, 0}, {10, 1}, {20, 2}, {30, 2}};
    map.validate();

    // instance bits must not affect the lookup; 77 is unmapped
    const rangeseg::RemapResult got = map.remap({10, 0x0005000au, 30, 77, 0});
    EXPECT_EQ(got.train_ids, (std::vector<std::int32_t>{1, 1, 2, 0, 0}));
    EXPECT_EQ(got.unmapped, 1u);

    EXPECT_EQ(map.to_raw({2, 0, 1}), (std::vector<std::uint32_t>{20, 0, 10}));
    EXPECT_THROW(map.to_raw({3}), std::invalid_argument);
    EXPECT_THROW(map.to_raw({-1}), std::invalid_argument);
}

TEST(LabelMapTest, WritePredictionsZeroesInstanceBits) {
    LabelMap map;
    map.train_to_raw = {0, 10};
    map.raw_to_train = {{0, 0}, {10, 1}};
    const std::string path = temp_path("pred.label");
    rangeseg::write_predictions(path, {1, 0, 1}, map);
    EXPECT_EQ(rangeseg::read_labels(path), (std::vector<std::uint32_t>{10, 0, 10}));
}

TEST(LabelMapTest, Validation) {
    LabelMap empty;
    EXPECT_THROW(empty.validate(), std::invalid_argument);

    LabelMap bad_target;
    bad_target.train_to_raw = {0, 10};
    bad_target.raw_to_train = {{0, 0}, {10, 5}};
    EXPECT_THROW(bad_target.validate(), std::invalid_argument);

    LabelMap bad_names;
    bad_names.train_to_raw = {0, 10};
    bad_names.class_names = {"only-one"};
    EXPECT_THROW(bad_names.validate(), std::invalid_argument);
}

TEST(Config, LoadsAndConvertsDegrees) {
    const std::string path = temp_path("config_ok.json");
    std::ofstream(path) << valid_config_json();
    const rangeseg::ConfigBundle bundle = rangeseg::load_config(path);
    EXPECT_EQ(bundle.projection.height, 16);
    EXPECT_NEAR(bundle.projection.fov_up, 3.0 * std::numbers::pi / 180.0, 1e-15);
    EXPECT_NEAR(bundle.projection.fov_down, -25.0 * std::numbers::pi / 180.0, 1e-15);
    EXPECT_EQ(bundle.projection.channel_means[0], 0.f);  // identity when omitted
    EXPECT_EQ(bundle.projection.channel_stds[4], 1.f);
    EXPECT_EQ(bundle.model.num_classes, 3);
    EXPECT_EQ(bundle.model.stage_widths[3], 8);
    EXPECT_EQ(bundle.loss.w_lovasz, 1.5);
    EXPECT_EQ(bundle.loss.aux_weights[2], 0.5);
    EXPECT_EQ(bundle.knn.window, 5);
    EXPECT_EQ(bundle.labels.raw_to_train.at(30), 2);
}

TEST(Config, ErrorsNameTheField) {
    auto expect_mentions = [&](nlohmann::json j, const std::string& needle) {
        const std::string path = temp_path("config_bad.json");
        std::ofstream(path) << j;
        try {
            rangeseg::load_config(path);
            FAIL() << "expected failure mentioning " << needle;
        } catch (const std::runtime_error& e) {
            EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
            EXPECT_NE(std::string(e.what()).find("config_bad.json"), std::string::npos);
        } catch (const std::invalid_argument& e) {
            EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
        }
    };

    nlohmann::json j = valid_config_json();
    j["version"] = 2;
    expect_mentions(j, "version");

    j = valid_config_json();
    j["projection"].erase("height");
    expect_mentions(j, "projection.height");

    j = valid_config_json();
    j["model"]["stage_blocks"] = {1, 1, 1};
    expect_mentions(j, "model.stage_blocks");

    j = valid_config_json();
    j["loss"]["boundary_theta0"] = 4;  // rejected downstream by validation
    expect_mentions(j, "theta0");

    j = valid_config_json();
    j["loss"]["class_freqs"] = {0.5, 0.5};
    expect_mentions(j, "class_freqs");

    j = valid_config_json();
    j["labels"]["raw_to_train"]["junk"] = 1;
    expect_mentions(j, "raw_to_train");

    j = valid_config_json();  // consistent two-class map against a three-class model
    j["labels"]["train_to_raw"] = {0, 10};
    j["labels"]["class_names"] = {"void", "a"};
    j["labels"]["raw_to_train"] = {{"0", 0}, {"10", 1}};
    expect_mentions(j, "train_to_raw");

    j = valid_config_json();
    j["knn"]["window"] = 4;
    expect_mentions(j, "window");

    EXPECT_THROW(rangeseg::load_config(temp_path("missing_config.json")), std::runtime_error);
}

TEST(Config, DefaultFileIsValid) {
    const rangeseg::ConfigBundle bundle =
        rangeseg::load_config(std::string(RANGESEG_CONFIG_DIR) + "/default.json");
    EXPECT_EQ(bundle.projection.height, 64);
    EXPECT_EQ(bundle.projection.width, 2048);
    EXPECT_EQ(bundle.model.num_classes, 20);
    EXPECT_EQ(bundle.labels.num_classes(), 20);
    EXPECT_EQ(bundle.labels.class_names[9], "road");
    EXPECT_EQ(bundle.labels.raw_to_train.at(40), 9);
    EXPECT_EQ(bundle.labels.raw_to_train.at(252), 1);  // moving car folds into car
    EXPECT_EQ(bundle.labels.train_to_raw[1], 10u);
    EXPECT_EQ(bundle.loss.ignore_class, 0);
}

}  // namespace
