// Binary tensor container used for model weights and other named arrays.
//
// File layout: 4-byte magic "LENW", little-endian u32 version (currently 1),
// little-endian u64 header length, UTF-8 JSON header, then a packed
// little-endian f32 blob. The header maps tensor name to
// {"dtype": "f32", "shape": [...], "offset": N}; offsets are relative to the
// blob start. The writer pads the header with trailing spaces so the blob
// begins at a 4-byte file offset, and lays tensors out in name order.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace rangeseg {

static_assert(std::endian::native == std::endian::little,
              "weight file IO assumes a little-endian host");

struct NamedTensor {
    std::vector<int> shape;
    std::vector<float> values;
};

// Keyed and iterated in lexicographic name order.
using TensorStore = std::map<std::string, NamedTensor>;

inline std::size_t numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

inline std::string shape_string(const std::vector<int>& shape) {
    std::string out;
    for (std::size_t i = 0; i < shape.size(); ++i)
        out += (i ? "x" : "") + std::to_string(shape[i]);
    return out;
}

inline void save_weights(const TensorStore& store, const std::string& path) {
    nlohmann::ordered_json header = nlohmann::ordered_json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, tensor] : store) {
        if (tensor.shape.empty())
            throw std::invalid_argument("save_weights: tensor '" + name + "' has an empty shape");
        for (int d : tensor.shape)
            if (d < 1)
                throw std::invalid_argument("save_weights: tensor '" + name +
                                            "' has a non-positive dimension");
        if (tensor.values.size() != numel(tensor.shape))
            throw std::invalid_argument(
                "save_weights: tensor '" + name + "' holds " +
                std::to_string(tensor.values.size()) + " values but its shape needs " +
                std::to_string(numel(tensor.shape)));
        header[name] = {{"dtype", "f32"}, {"shape", tensor.shape}, {"offset", offset}};
        offset += tensor.values.size() * sizeof(float);
    }
    std::string text = header.dump();
    while ((16 + text.size()) % 4 != 0) text.push_back(' ');

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_weights: cannot open '" + path + "' for writing");
    const char magic[4] = {'L', 'E', 'N', 'W'};
    const std::uint32_t version = 1;
    const std::uint64_t header_len = text.size();
    out.write(magic, 4);
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&header_len), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, tensor] : store)
        out.write(reinterpret_cast<const char*>(tensor.values.data()),
                  static_cast<std::streamsize>(tensor.values.size() * sizeof(float)));
    if (!out) throw std::runtime_error("save_weights: failed while writing '" + path + "'");
}

inline TensorStore load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_weights: cannot open '" + path + "'");

    char magic[4] = {};
    std::uint32_t version = 0;
    std::uint64_t header_len = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), 4);
    in.read(reinterpret_cast<char*>(&header_len), 8);
    if (!in) throw std::runtime_error("load_weights: '" + path + "' is truncated");
    if (std::memcmp(magic, "LENW", 4) != 0)
        throw std::runtime_error("load_weights: '" + path + "' is not a LENW weights file");
    if (version != 1)
        throw std::runtime_error("load_weights: '" + path + "' has unsupported version " +
                                 std::to_string(version) + ", expected 1");

    std::string text(header_len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw std::runtime_error("load_weights: '" + path + "' is truncated inside the header");
    const std::vector<char> blob((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());

    nlohmann::ordered_json header;
    try {
        header = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("load_weights: '" + path + "' header is not valid JSON: " +
                                 e.what());
    }
    if (!header.is_object())
        throw std::runtime_error("load_weights: '" + path + "' header must be a JSON object");

    TensorStore store;
    for (const auto& [name, entry] : header.items()) {
        auto fail = [&](const std::string& what) {
            throw std::runtime_error("load_weights: tensor '" + name + "' in '" + path + "' " +
                                     what);
        };
        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
            !entry.contains("offset"))
            fail("is missing dtype, shape, or offset");
        if (!entry["dtype"].is_string() || entry["dtype"].get<std::string>() != "f32")
            fail("has unsupported dtype '" + entry["dtype"].dump() + "', expected \"f32\"");
        if (!entry["shape"].is_array() || entry["shape"].empty()) fail("has an invalid shape");
        std::vector<int> shape;
        for (const auto& d : entry["shape"]) {
            if (!d.is_number_integer() || d.get<std::int64_t>() < 1) fail("has an invalid shape");
            shape.push_back(d.get<int>());
        }
        if (!entry["offset"].is_number_unsigned()) fail("has an invalid offset");
        const std::uint64_t off = entry["offset"].get<std::uint64_t>();
        if (off % 4 != 0) fail("has offset " + std::to_string(off) + ", not 4-byte aligned");
        const std::size_t bytes = numel(shape) * sizeof(float);
        if (off + bytes > blob.size()) fail("extends past the end of the file");

        NamedTensor tensor;
        tensor.shape = std::move(shape);
        tensor.values.resize(bytes / sizeof(float));
        std::memcpy(tensor.values.data(), blob.data() + off, bytes);
        store.insert_or_assign(name, std::move(tensor));
    }
    return store;
}

}  // namespace rangeseg
