// LiDAR point cloud container and the scan-level augmentations: rigid
// rotation about z, y-axis flip, and seeded Bernoulli point dropout.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace rangeseg {

struct Point {
    float x = 0.f, y = 0.f, z = 0.f;
    float remission = 0.f;

    float range() const {
        return static_cast<float>(std::sqrt(static_cast<double>(x) * x +
                                            static_cast<double>(y) * y +
                                            static_cast<double>(z) * z));
    }
};

struct PointCloud {
    std::vector<Point> points;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

inline PointCloud rotate_z(const PointCloud& cloud, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    PointCloud out;
    out.points.reserve(cloud.size());
    for (const Point& p : cloud.points) {
        Point q = p;
        q.x = static_cast<float>(c * p.x - s * p.y);
        q.y = static_cast<float>(s * p.x + c * p.y);
        out.points.push_back(q);
    }
    return out;
}

inline PointCloud flip_y(const PointCloud& cloud) {
    PointCloud out = cloud;
    for (Point& p : out.points) p.y = -p.y;
    return out;
}

// Keeps each point independently with probability keep_prob. Draws raw
// mt19937 words against a fixed threshold, so the survivor set depends only
// on (cloud size, seed) and is identical on every platform.
inline PointCloud dropout(const PointCloud& cloud, double keep_prob, std::uint32_t seed) {
    if (!(keep_prob > 0.0) || keep_prob > 1.0)
        throw std::invalid_argument("dropout: keep_prob must be in (0, 1], got " +
                                    std::to_string(keep_prob));
    std::mt19937 rng(seed);
    const double threshold = keep_prob * 4294967296.0;  // 2^32
    PointCloud out;
    out.points.reserve(cloud.size());
    for (const Point& p : cloud.points)
        if (static_cast<double>(rng()) < threshold) out.points.push_back(p);
    return out;
}

}  // namespace rangeseg
