// Spherical projection of a LiDAR scan onto a range image, the inverse
// per-point label lookup, and KNN label refinement over the image grid.
//
// Image coordinates follow the spherical mapping
//   u = 1/2 * (1 - atan2(y, x)/pi) * w
//   v = (1 - (asin(z/r) + |fov_down|) / fov) * h
// with fov = fov_up + |fov_down|, so the top of the vertical field of view
// lands on row 0 and the bottom on row h-1. Coordinates are floored, then
// clamped into bounds. When several points fall onto one pixel the nearest
// one is kept.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "rangeseg/pointcloud.hpp"
#include "rangeseg/tensor.hpp"

namespace rangeseg {

struct ProjectionConfig {
    int height = 64;
    int width = 2048;
    double fov_up = 3.0 * std::numbers::pi / 180.0;     // radians above horizon
    double fov_down = -25.0 * std::numbers::pi / 180.0; // radians, negative below horizon
    // Per-channel standardization of (range, x, y, z, remission); identity by default.
    std::array<float, 5> channel_means{0.f, 0.f, 0.f, 0.f, 0.f};
    std::array<float, 5> channel_stds{1.f, 1.f, 1.f, 1.f, 1.f};

    double total_fov() const { return fov_up + std::abs(fov_down); }

    void validate() const {
        if (height < 2 || width < 2)
            throw std::invalid_argument("ProjectionConfig: image must be at least 2x2, got " +
                                        std::to_string(height) + "x" + std::to_string(width));
        if (!(total_fov() > 0.0))
            throw std::invalid_argument("ProjectionConfig: vertical field of view must be positive");
        for (float s : channel_stds)
            if (!(s > 0.f))
                throw std::invalid_argument("ProjectionConfig: channel_stds must be strictly positive");
    }
};

struct KnnConfig {
    int k = 5;
    int window = 5;            // odd side length of the search window
    double range_cutoff = 1.0; // meters
    double gaussian_sigma = 1.0;

    void validate() const {
        if (k < 1) throw std::invalid_argument("KnnConfig: k must be >= 1");
        if (window < 1 || window % 2 == 0)
            throw std::invalid_argument("KnnConfig: window must be odd and >= 1, got " +
                                        std::to_string(window));
        if (!(range_cutoff > 0.0))
            throw std::invalid_argument("KnnConfig: range_cutoff must be positive");
        if (!(gaussian_sigma > 0.0))
            throw std::invalid_argument("KnnConfig: gaussian_sigma must be positive");
    }
};

constexpr std::int32_t kNoPoint = -1;  // point_of_pixel sentinel for empty pixels

struct RangeImage {
    int h = 0, w = 0;
    // 1 x 5 x h x w, channel order (range, x, y, z, remission), standardized;
    // pixels that received no point are zero in every channel.
    Tensor4 channels;
    std::vector<std::uint8_t> mask;                  // h*w, 1 where a point was retained
    std::vector<float> ranges;                       // h*w raw range of the retained point, 0 if empty
    std::vector<std::int32_t> point_of_pixel;        // h*w index of the retained point, kNoPoint if empty
    std::vector<std::array<std::int32_t, 2>> pixel_of_point;  // per point (row, col); (-1,-1) if rejected
    std::vector<std::int32_t> rejected_points;       // indices of zero-range points that were dropped

    bool point_projected(std::size_t i) const { return pixel_of_point[i][0] >= 0; }
    std::size_t pixel_index(std::size_t i) const {
        return static_cast<std::size_t>(pixel_of_point[i][0]) * w + pixel_of_point[i][1];
    }
};

inline RangeImage project(const PointCloud& cloud, const ProjectionConfig& cfg) {
    cfg.validate();
    if (cloud.empty()) throw std::invalid_argument("project: empty point cloud");

    const int h = cfg.height, w = cfg.width;
    RangeImage img;
    img.h = h;
    img.w = w;
    img.channels = Tensor4(1, 5, h, w);
    img.mask.assign(static_cast<std::size_t>(h) * w, 0);
    img.ranges.assign(static_cast<std::size_t>(h) * w, 0.f);
    img.point_of_pixel.assign(static_cast<std::size_t>(h) * w, kNoPoint);
    img.pixel_of_point.assign(cloud.size(), {-1, -1});

    const double fov = cfg.total_fov();
    const double fov_below = std::abs(cfg.fov_down);

    std::vector<float> point_range(cloud.size(), 0.f);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Point& p = cloud.points[i];
        const double r = std::sqrt(static_cast<double>(p.x) * p.x +
                                   static_cast<double>(p.y) * p.y +
                                   static_cast<double>(p.z) * p.z);
        if (!(r > 0.0)) {
            img.rejected_points.push_back(static_cast<std::int32_t>(i));
            continue;
        }
        point_range[i] = static_cast<float>(r);

        const double u = 0.5 *
                         (1.0 - std::atan2(static_cast<double>(p.y), static_cast<double>(p.x)) /
                                    std::numbers::pi) *
                         w;
        const double pitch = std::asin(p.z / r);
        const double v = (1.0 - (pitch + fov_below) / fov) * h;

        int col = static_cast<int>(std::floor(u));
        int row = static_cast<int>(std::floor(v));
        col = std::clamp(col, 0, w - 1);
        row = std::clamp(row, 0, h - 1);

        img.pixel_of_point[i] = {row, col};
        const std::size_t px = static_cast<std::size_t>(row) * w + col;
        // collision: keep the nearest point (first seen wins on exact ties)
        if (img.point_of_pixel[px] == kNoPoint || point_range[i] < img.ranges[px]) {
            img.point_of_pixel[px] = static_cast<std::int32_t>(i);
            img.ranges[px] = point_range[i];
            img.mask[px] = 1;
        }
    }

    float* ch[5];
    for (int c = 0; c < 5; ++c) ch[c] = img.channels.plane(0, c);
    for (std::size_t px = 0; px < img.mask.size(); ++px) {
        if (!img.mask[px]) continue;  // empty pixels stay zero in every channel
        const std::int32_t pi = img.point_of_pixel[px];
        const Point& p = cloud.points[pi];
        const float raw[5] = {img.ranges[px], p.x, p.y, p.z, p.remission};
        for (int c = 0; c < 5; ++c)
            ch[c][px] = (raw[c] - cfg.channel_means[c]) / cfg.channel_stds[c];
    }
    return img;
}

// Reads the predicted class of each point straight from its pixel. Points the
// projection rejected (zero range) get class 0.
inline std::vector<std::int32_t> unproject(const std::vector<std::int32_t>& labels_img,
                                           const RangeImage& img) {
    if (labels_img.size() != static_cast<std::size_t>(img.h) * img.w)
        throw std::invalid_argument("unproject: label image has " +
                                    std::to_string(labels_img.size()) + " entries, expected " +
                                    std::to_string(static_cast<std::size_t>(img.h) * img.w));
    std::vector<std::int32_t> out(img.pixel_of_point.size(), 0);
    for (std::size_t i = 0; i < img.pixel_of_point.size(); ++i)
        if (img.point_projected(i)) out[i] = labels_img[img.pixel_index(i)];
    return out;
}

// Per-point label refinement: vote among the k range-nearest valid pixels in
// the window around the point's pixel, Gaussian-weighted by the range gap.
// Candidates beyond range_cutoff are discarded; if none survive the point
// keeps its own pixel's label. Vote ties go to the smallest class id.
inline std::vector<std::int32_t> knn_refine(const std::vector<std::int32_t>& labels_img,
                                            const RangeImage& img, const PointCloud& cloud,
                                            const KnnConfig& cfg) {
    cfg.validate();
    if (labels_img.size() != static_cast<std::size_t>(img.h) * img.w)
        throw std::invalid_argument("knn_refine: label image has " +
                                    std::to_string(labels_img.size()) + " entries, expected " +
                                    std::to_string(static_cast<std::size_t>(img.h) * img.w));
    if (cloud.size() != img.pixel_of_point.size())
        throw std::invalid_argument("knn_refine: cloud size " + std::to_string(cloud.size()) +
                                    " does not match projection of " +
                                    std::to_string(img.pixel_of_point.size()) + " points");
    for (std::int32_t label : labels_img)
        if (label < 0)
            throw std::invalid_argument("knn_refine: label image contains negative class id " +
                                        std::to_string(label));

    const int radius = (cfg.window - 1) / 2;
    const double inv_two_sigma_sq = 1.0 / (2.0 * cfg.gaussian_sigma * cfg.gaussian_sigma);
    std::vector<std::int32_t> out(cloud.size(), 0);

    struct Candidate {
        double gap;
        int order;  // row-major position inside the window, breaks gap ties
        std::int32_t label;
    };

    parallel_for(static_cast<std::int64_t>(cloud.size()), [&](std::int64_t i) {
        if (!img.point_projected(i)) return;  // rejected points keep class 0
        const int row = img.pixel_of_point[i][0];
        const int col = img.pixel_of_point[i][1];
        const double r_point = cloud.points[i].range();

        thread_local std::vector<Candidate> candidates;
        candidates.clear();
        int order = 0;
        for (int dy = -radius; dy <= radius; ++dy)
            for (int dx = -radius; dx <= radius; ++dx, ++order) {
                const int y = row + dy, x = col + dx;
                if (y < 0 || y >= img.h || x < 0 || x >= img.w) continue;
                const std::size_t px = static_cast<std::size_t>(y) * img.w + x;
                if (!img.mask[px]) continue;
                const double gap = std::abs(r_point - static_cast<double>(img.ranges[px]));
                if (gap > cfg.range_cutoff) continue;
                candidates.push_back({gap, order, labels_img[px]});
            }

        if (candidates.empty()) {
            out[i] = labels_img[static_cast<std::size_t>(row) * img.w + col];
            return;
        }
        auto closer = [](const Candidate& a, const Candidate& b) {
            return a.gap != b.gap ? a.gap < b.gap : a.order < b.order;
        };
        const std::size_t keep = std::min<std::size_t>(cfg.k, candidates.size());
        std::partial_sort(candidates.begin(), candidates.begin() + keep, candidates.end(), closer);

        std::int32_t max_label = 0;
        for (std::size_t j = 0; j < keep; ++j) max_label = std::max(max_label, candidates[j].label);
        thread_local std::vector<double> votes;
        votes.assign(static_cast<std::size_t>(max_label) + 1, 0.0);
        for (std::size_t j = 0; j < keep; ++j)
            votes[candidates[j].label] += std::exp(-candidates[j].gap * candidates[j].gap *
                                                   inv_two_sigma_sq);
        std::int32_t best = 0;
        for (std::size_t cls = 1; cls < votes.size(); ++cls)
            if (votes[cls] > votes[best]) best = static_cast<std::int32_t>(cls);
        out[i] = best;
    });
    return out;
}

}  // namespace rangeseg
