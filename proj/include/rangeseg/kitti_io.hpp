// Binary scan and label file input/output plus the raw-to-train label mapping.
//
// A scan file is a packed little-endian stream of float32 x, y, z, remission
// records. A label file is packed little-endian uint32 with the semantic id
// in the low 16 bits and the instance id in the high 16 bits. Written label
// files carry a zero instance id.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rangeseg/pointcloud.hpp"

namespace rangeseg {

constexpr std::uint16_t semantic_id(std::uint32_t raw) {
    return static_cast<std::uint16_t>(raw & 0xffffu);
}
constexpr std::uint16_t instance_id(std::uint32_t raw) {
    return static_cast<std::uint16_t>(raw >> 16);
}

struct ScanData {
    PointCloud cloud;
    std::size_t rejected_nonfinite = 0;  // points dropped for NaN or infinity
};

namespace detail {

inline std::vector<char> read_binary(const std::string& path, const char* kind,
                                     std::size_t record_size) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error(std::string("cannot open ") + kind + " file " + path);
    const auto size = static_cast<std::size_t>(in.tellg());
    if (size % record_size != 0)
        throw std::runtime_error(std::string(kind) + " file " + path + " has size " +
                                 std::to_string(size) + ", not a multiple of " +
                                 std::to_string(record_size));
    std::vector<char> bytes(size);
    in.seekg(0);
    in.read(bytes.data(), static_cast<std::streamsize>(size));
    if (!in) throw std::runtime_error(std::string("short read from ") + kind + " file " + path);
    return bytes;
}

inline void write_binary(const std::string& path, const char* kind, const void* data,
                         std::size_t size) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(std::string("cannot open ") + kind + " file " + path +
                                       " for writing");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) throw std::runtime_error(std::string("short write to ") + kind + " file " + path);
}

}  // namespace detail

inline ScanData read_scan(const std::string& path) {
    const std::vector<char> bytes = detail::read_binary(path, "scan", 16);
    if (bytes.empty()) throw std::runtime_error("scan file " + path + " is empty");
    const auto* values = reinterpret_cast<const float*>(bytes.data());
    ScanData out;
    out.cloud.points.reserve(bytes.size() / 16);
    for (std::size_t i = 0; i < bytes.size() / 16; ++i) {
        const Point p{values[4 * i], values[4 * i + 1], values[4 * i + 2], values[4 * i + 3]};
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z) ||
            !std::isfinite(p.remission)) {
            ++out.rejected_nonfinite;
            continue;
        }
        out.cloud.points.push_back(p);
    }
    return out;
}

inline void write_scan(const std::string& path, const PointCloud& cloud) {
    std::vector<float> values;
    values.reserve(cloud.points.size() * 4);
    for (const Point& p : cloud.points) {
        values.push_back(p.x);
        values.push_back(p.y);
        values.push_back(p.z);
        values.push_back(p.remission);
    }
    detail::write_binary(path, "scan", values.data(), values.size() * sizeof(float));
}

inline std::vector<std::uint32_t> read_labels(const std::string& path) {
    const std::vector<char> bytes = detail::read_binary(path, "label", 4);
    std::vector<std::uint32_t> labels(bytes.size() / 4);
    std::memcpy(labels.data(), bytes.data(), bytes.size());
    return labels;
}

inline void write_labels(const std::string& path, const std::vector<std::uint32_t>& labels) {
    detail::write_binary(path, "label", labels.data(), labels.size() * sizeof(std::uint32_t));
}

struct RemapResult {
    std::vector<std::int32_t> train_ids;
    std::size_t unmapped = 0;  // raw ids missing from the map, sent to class 0
};

struct LabelMap {
    std::map<std::uint32_t, std::int32_t> raw_to_train;
    std::vector<std::uint32_t> train_to_raw;
    std::vector<std::string> class_names;

    int num_classes() const { return static_cast<int>(train_to_raw.size()); }

    void validate() const {
        if (train_to_raw.empty()) throw std::invalid_argument("label map: train_to_raw is empty");
        if (!class_names.empty() && class_names.size() != train_to_raw.size())
            throw std::invalid_argument("label map: " + std::to_string(class_names.size()) +
                                        " class names for " + std::to_string(train_to_raw.size()) +
                                        " classes");
        for (const auto& [raw, train] : raw_to_train)
            if (train < 0 || train >= num_classes())
                throw std::invalid_argument("label map: raw id " + std::to_string(raw) +
                                            " maps to out-of-range train id " +
                                            std::to_string(train));
    }

    RemapResult remap(const std::vector<std::uint32_t>& raw_labels) const {
        RemapResult out;
        out.train_ids.reserve(raw_labels.size());
        for (std::uint32_t raw : raw_labels) {
            const auto it = raw_to_train.find(semantic_id(raw));
            if (it == raw_to_train.end()) {
                ++out.unmapped;
                out.train_ids.push_back(0);
            } else {
                out.train_ids.push_back(it->second);
            }
        }
        return out;
    }

    std::vector<std::uint32_t> to_raw(const std::vector<std::int32_t>& train_ids) const {
        std::vector<std::uint32_t> out;
        out.reserve(train_ids.size());
        for (std::int32_t id : train_ids) {
            if (id < 0 || id >= num_classes())
                throw std::invalid_argument("label map: train id " + std::to_string(id) +
                                            " outside [0, " + std::to_string(num_classes()) + ")");
            out.push_back(train_to_raw[static_cast<std::size_t>(id)]);
        }
        return out;
    }
};

inline void write_predictions(const std::string& path, const std::vector<std::int32_t>& train_ids,
                              const LabelMap& map) {
    write_labels(path, map.to_raw(train_ids));
}

}  // namespace rangeseg
