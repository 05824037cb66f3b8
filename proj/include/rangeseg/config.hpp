// JSON configuration covering projection geometry, model shape, loss
// weighting, post-processing, and the label mapping. Vertical field of view
// is written in degrees in the file and converted to radians on load.
#pragma once

#include <array>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "rangeseg/kitti_io.hpp"
#include "rangeseg/losses.hpp"
#include "rangeseg/model.hpp"
#include "rangeseg/projection.hpp"

namespace rangeseg {

struct ConfigBundle {
    ProjectionConfig projection;
    ModelConfig model;
    LossConfig loss;
    KnnConfig knn;
    LabelMap labels;

    void validate() const {
        projection.validate();
        model.validate();
        loss.validate(model.num_classes);
        knn.validate();
        labels.validate();
        if (model.in_channels != 5)
            throw std::invalid_argument("config: the projector emits 5 channels, model.in_channels is " +
                                        std::to_string(model.in_channels));
        if (labels.num_classes() != model.num_classes)
            throw std::invalid_argument("config: labels.train_to_raw has " +
                                        std::to_string(labels.num_classes()) +
                                        " entries for model.num_classes " +
                                        std::to_string(model.num_classes));
    }
};

namespace detail {

inline const nlohmann::json& cfg_field(const nlohmann::json& obj, const std::string& scope,
                                       const char* key) {
    if (!obj.is_object())
        throw std::runtime_error("config field " + scope + ": expected an object");
    const auto it = obj.find(key);
    if (it == obj.end()) throw std::runtime_error("config: missing field " + scope + "." + key);
    return *it;
}

template <typename T>
T cfg_get(const nlohmann::json& obj, const std::string& scope, const char* key) {
    try {
        return cfg_field(obj, scope, key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("config field " + scope + "." + key + ": " + e.what());
    }
}

template <typename T, std::size_t N>
std::array<T, N> cfg_get_array(const nlohmann::json& obj, const std::string& scope,
                               const char* key) {
    const auto values = cfg_get<std::vector<T>>(obj, scope, key);
    if (values.size() != N)
        throw std::runtime_error("config field " + scope + "." + key + ": expected " +
                                 std::to_string(N) + " values, got " +
                                 std::to_string(values.size()));
    std::array<T, N> out{};
    std::copy(values.begin(), values.end(), out.begin());
    return out;
}

}  // namespace detail

inline ConfigBundle parse_config(const nlohmann::json& root) {
    using detail::cfg_field;
    using detail::cfg_get;
    using detail::cfg_get_array;

    const int version = cfg_get<int>(root, "config", "version");
    if (version != 1)
        throw std::runtime_error("config: version " + std::to_string(version) +
                                 " unsupported, expected 1");
    ConfigBundle bundle;

    const nlohmann::json& proj = cfg_field(root, "config", "projection");
    bundle.projection.height = cfg_get<int>(proj, "projection", "height");
    bundle.projection.width = cfg_get<int>(proj, "projection", "width");
    constexpr double deg = std::numbers::pi / 180.0;
    bundle.projection.fov_up = cfg_get<double>(proj, "projection", "fov_up_deg") * deg;
    bundle.projection.fov_down = cfg_get<double>(proj, "projection", "fov_down_deg") * deg;
    if (proj.contains("channel_means"))
        bundle.projection.channel_means = cfg_get_array<float, 5>(proj, "projection", "channel_means");
    if (proj.contains("channel_stds"))
        bundle.projection.channel_stds = cfg_get_array<float, 5>(proj, "projection", "channel_stds");

    const nlohmann::json& model = cfg_field(root, "config", "model");
    bundle.model.in_channels = cfg_get<int>(model, "model", "in_channels");
    bundle.model.num_classes = cfg_get<int>(model, "model", "num_classes");
    bundle.model.stage_blocks = cfg_get_array<int, 4>(model, "model", "stage_blocks");
    bundle.model.stage_widths = cfg_get_array<int, 4>(model, "model", "stage_widths");
    bundle.model.decoder_width = cfg_get<int>(model, "model", "decoder_width");
    bundle.model.msca_local = cfg_get<int>(model, "model", "msca_local");
    bundle.model.msca_branches = cfg_get<std::vector<int>>(model, "model", "msca_branches");

    const nlohmann::json& loss = cfg_field(root, "config", "loss");
    bundle.loss.class_freqs = cfg_get<std::vector<float>>(loss, "loss", "class_freqs");
    bundle.loss.ignore_class = cfg_get<int>(loss, "loss", "ignore_class");
    bundle.loss.boundary_theta0 = cfg_get<int>(loss, "loss", "boundary_theta0");
    bundle.loss.eps = cfg_get<double>(loss, "loss", "eps");
    bundle.loss.w_wce = cfg_get<double>(loss, "loss", "w_wce");
    bundle.loss.w_lovasz = cfg_get<double>(loss, "loss", "w_lovasz");
    bundle.loss.w_boundary = cfg_get<double>(loss, "loss", "w_boundary");
    bundle.loss.aux_weights = cfg_get_array<double, 3>(loss, "loss", "aux_weights");

    const nlohmann::json& knn = cfg_field(root, "config", "knn");
    bundle.knn.k = cfg_get<int>(knn, "knn", "k");
    bundle.knn.window = cfg_get<int>(knn, "knn", "window");
    bundle.knn.range_cutoff = cfg_get<double>(knn, "knn", "range_cutoff");
    bundle.knn.gaussian_sigma = cfg_get<double>(knn, "knn", "gaussian_sigma");

    const nlohmann::json& labels = cfg_field(root, "config", "labels");
    bundle.labels.class_names = cfg_get<std::vector<std::string>>(labels, "labels", "class_names");
    bundle.labels.train_to_raw = cfg_get<std::vector<std::uint32_t>>(labels, "labels", "train_to_raw");
    const nlohmann::json& raw_map = cfg_field(labels, "labels", "raw_to_train");
    if (!raw_map.is_object())
        throw std::runtime_error("config field labels.raw_to_train: expected an object");
    for (const auto& [key, value] : raw_map.items()) {
        std::uint32_t raw = 0;
        try {
            std::size_t used = 0;
            const unsigned long parsed = std::stoul(key, &used);
            if (used != key.size() || parsed > 0xffffffffu) throw std::invalid_argument(key);
            raw = static_cast<std::uint32_t>(parsed);
        } catch (const std::exception&) {
            throw std::runtime_error("config field labels.raw_to_train: bad raw id key \"" + key +
                                     "\"");
        }
        if (!value.is_number_integer())
            throw std::runtime_error("config field labels.raw_to_train." + key +
                                     ": expected an integer");
        bundle.labels.raw_to_train[raw] = value.get<std::int32_t>();
    }

    bundle.validate();
    return bundle;
}

inline ConfigBundle load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("config file " + path + ": " + e.what());
    }
    try {
        return parse_config(root);
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string(e.what()) + " (in " + path + ")");
    }
}

}  // namespace rangeseg
