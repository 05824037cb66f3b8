// LENW weight container: round trips, on-disk layout, and malformed files.
#include <gtest/gtest.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "rangeseg/weights.hpp"

namespace {

using rangeseg::NamedTensor;
using rangeseg::TensorStore;

std::string temp_path(const std::string& name) { return testing::TempDir() + name; }

std::vector<char> read_all(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    EXPECT_TRUE(in.good()) << path;
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Assembles a file with the LENW framing but arbitrary header text and blob.
void write_raw(const std::string& path, std::uint32_t version, const std::string& header,
               const std::vector<float>& blob) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write("LENW", 4);
    out.write(reinterpret_cast<const char*>(&version), 4);
    const std::uint64_t header_len = header.size();
    out.write(reinterpret_cast<const char*>(&header_len), 8);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(reinterpret_cast<const char*>(blob.data()),
              static_cast<std::streamsize>(blob.size() * sizeof(float)));
}

TensorStore sample_store() {
    std::mt19937 rng(99);
    std::uniform_real_distribution<float> dist(-2.f, 2.f);
    TensorStore store;
    store["beta"] = {{2, 3}, {}};
    store["alpha"] = {{3}, {0.f, -0.f, 3.25f}};
    store["conv.weight"] = {{2, 1, 3, 3}, {}};
    for (int i = 0; i < 6; ++i) store["beta"].values.push_back(dist(rng));
    for (int i = 0; i < 18; ++i) store["conv.weight"].values.push_back(dist(rng));
    return store;
}

TEST(Weights, RoundTrip) {
    const TensorStore store = sample_store();
    const std::string path = temp_path("roundtrip.lenw");
    rangeseg::save_weights(store, path);
    const TensorStore loaded = rangeseg::load_weights(path);

    ASSERT_EQ(loaded.size(), store.size());
    for (const auto& [name, tensor] : store) {
        ASSERT_TRUE(loaded.count(name)) << name;
        const NamedTensor& got = loaded.at(name);
        EXPECT_EQ(got.shape, tensor.shape) << name;
        ASSERT_EQ(got.values.size(), tensor.values.size()) << name;
        EXPECT_EQ(0, std::memcmp(got.values.data(), tensor.values.data(),
                                 tensor.values.size() * sizeof(float)))
            << name;
    }
}

TEST(Weights, EmptyStoreRoundTrip) {
    const std::string path = temp_path("empty.lenw");
    rangeseg::save_weights({}, path);
    EXPECT_TRUE(rangeseg::load_weights(path).empty());
}

TEST(Weights, OnDiskLayout) {
    const std::string path = temp_path("layout.lenw");
    rangeseg::save_weights(sample_store(), path);
    const std::vector<char> bytes = read_all(path);
    ASSERT_GT(bytes.size(), 16u);

    EXPECT_EQ(0, std::memcmp(bytes.data(), "LENW", 4));
    std::uint32_t version = 0;
    std::uint64_t header_len = 0;
    std::memcpy(&version, bytes.data() + 4, 4);
    std::memcpy(&header_len, bytes.data() + 8, 8);
    EXPECT_EQ(version, 1u);
    EXPECT_EQ((16 + header_len) % 4, 0u);  // blob starts 4-byte aligned

    const std::string header(bytes.data() + 16, header_len);
    const std::size_t close = header.rfind('}');
    ASSERT_NE(close, std::string::npos);
    for (std::size_t i = close + 1; i < header.size(); ++i) EXPECT_EQ(header[i], ' ');

    // names laid out in lexicographic order, offsets packed back to back
    const auto parsed = nlohmann::ordered_json::parse(header);
    std::vector<std::string> names;
    std::uint64_t expect_offset = 0;
    for (const auto& [name, entry] : parsed.items()) {
        names.push_back(name);
        EXPECT_EQ(entry["offset"].get<std::uint64_t>(), expect_offset) << name;
        std::size_t count = 1;
        for (const auto& d : entry["shape"]) count *= d.get<std::size_t>();
        expect_offset += count * sizeof(float);
    }
    EXPECT_EQ(names, (std::vector<std::string>{"alpha", "beta", "conv.weight"}));
    EXPECT_EQ(16 + header_len + expect_offset, bytes.size());

    // blob holds the first tensor's values verbatim at its offset
    float first = 0.f;
    std::memcpy(&first, bytes.data() + 16 + header_len, 4);
    EXPECT_EQ(first, 0.f);
}

TEST(Weights, SaveRejectsBadTensors) {
    const std::string path = temp_path("reject.lenw");
    TensorStore store;
    store["w"] = {{}, {}};
    EXPECT_THROW(rangeseg::save_weights(store, path), std::invalid_argument);
    store["w"] = {{0, 2}, {}};
    EXPECT_THROW(rangeseg::save_weights(store, path), std::invalid_argument);
    store["w"] = {{2, 2}, {1.f, 2.f, 3.f}};
    try {
        rangeseg::save_weights(store, path);
        FAIL() << "expected a size mismatch error";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("'w'"), std::string::npos);
    }
}

TEST(Weights, LoadRejectsBadFraming) {
    EXPECT_THROW(rangeseg::load_weights(temp_path("does-not-exist.lenw")), std::runtime_error);

    const std::string path = temp_path("bad.lenw");
    rangeseg::save_weights(sample_store(), path);
    std::vector<char> bytes = read_all(path);

    {  // corrupt the magic
        std::vector<char> corrupted = bytes;
        corrupted[0] = 'X';
        std::ofstream(path, std::ios::binary | std::ios::trunc)
            .write(corrupted.data(), static_cast<std::streamsize>(corrupted.size()));
        EXPECT_THROW(rangeseg::load_weights(path), std::runtime_error);
    }
    {  // bump the version
        std::vector<char> corrupted = bytes;
        corrupted[4] = 2;
        std::ofstream(path, std::ios::binary | std::ios::trunc)
            .write(corrupted.data(), static_cast<std::streamsize>(corrupted.size()));
        try {
            rangeseg::load_weights(path);
            FAIL() << "expected a version error";
        } catch (const std::runtime_error& e) {
            EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
        }
    }
    {  // cut the file inside the header
        std::ofstream(path, std::ios::binary | std::ios::trunc).write(bytes.data(), 20);
        EXPECT_THROW(rangeseg::load_weights(path), std::runtime_error);
    }
    {  // drop the last blob bytes so a tensor runs off the end
        std::ofstream(path, std::ios::binary | std::ios::trunc)
            .write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 4));
        try {
            rangeseg::load_weights(path);
            FAIL() << "expected a short blob error";
        } catch (const std::runtime_error& e) {
            EXPECT_NE(std::string(e.what()).find("conv.weight"), std::string::npos);
        }
    }
}

TEST(Weights, LoadRejectsBadHeaderEntries) {
    const std::string path = temp_path("entries.lenw");
    const std::vector<float> blob(8, 1.f);

    write_raw(path, 1, "not json", blob);
    EXPECT_THROW(rangeseg::load_weights(path), std::runtime_error);

    write_raw(path, 1, "[]", blob);
    EXPECT_THROW(rangeseg::load_weights(path), std::runtime_error);

    write_raw(path, 1, R"({"w": {"dtype": "f64", "shape": [2], "offset": 0}})", blob);
    try {
        rangeseg::load_weights(path);
        FAIL() << "expected a dtype error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("f64"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("'w'"), std::string::npos);
    }

    write_raw(path, 1, R"({"w": {"dtype": "f32", "shape": [2]}})", blob);
    EXPECT_THROW(rangeseg::load_weights(path), std::runtime_error);  // missing offset

    write_raw(path, 1, R"({"w": {"dtype": "f32", "shape": [], "offset": 0}})", blob);
    EXPECT_THROW(rangeseg::load_weights(path), std::runtime_error);

    write_raw(path, 1, R"({"w": {"dtype": "f32", "shape": [0], "offset": 0}})", blob);
    EXPECT_THROW(rangeseg::load_weights(path), std::runtime_error);

    write_raw(path, 1, R"({"w": {"dtype": "f32", "shape": [2], "offset": 2}})", blob);
    EXPECT_THROW(rangeseg::load_weights(path), std::runtime_error);  // misaligned

    write_raw(path, 1, R"({"w": {"dtype": "f32", "shape": [2], "offset": 28}})", blob);
    EXPECT_THROW(rangeseg::load_weights(path), std::runtime_error);  // past the end

    // a header that is valid but oddly ordered still loads
    write_raw(path, 1, R"({"z": {"offset": 16, "shape": [2, 2], "dtype": "f32"}})", blob);
    const TensorStore ok = rangeseg::load_weights(path);
    ASSERT_EQ(ok.size(), 1u);
    EXPECT_EQ(ok.at("z").shape, (std::vector<int>{2, 2}));
    EXPECT_EQ(ok.at("z").values, (std::vector<float>{1.f, 1.f, 1.f, 1.f}));
}

}  // namespace
