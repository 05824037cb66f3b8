// Self-contained finite-difference verification of the analytic loss
// gradients. Instances are drawn randomly, then filtered so that sorting and
// pooling decisions inside the piecewise-linear losses cannot flip within the
// probe step; on the surviving instances central differences must match.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rangeseg/losses.hpp"
#include "rangeseg/tensor.hpp"

namespace rangeseg {

struct GradCheckOptions {
    std::uint32_t seed = 1;
    int instances = 5;  // accepted instances per loss
    double step = 1e-3;
    double tol_wce = 1e-4;
    double tol_lovasz = 1e-3;
    double tol_boundary = 1e-3;
    // instance extents per loss; larger images reject more candidates before
    // finding sort- and pool-stable ones
    int wce_h = 8, wce_w = 8;
    int lovasz_h = 4, lovasz_w = 4;
    int boundary_h = 5, boundary_w = 5;
    std::int64_t corrupt_index = -1;  // when >= 0, spoil one gradient entry
};

struct GradCheckResult {
    std::string name;
    int instances = 0;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    bool passed() const { return instances > 0 && max_rel_error < tolerance; }
};

namespace detail {

inline double gc_softmax_at(const Tensor4& logits, int n, int c, int y, int x) {
    double denom = 0.0;
    for (int cc = 0; cc < logits.c(); ++cc) denom += std::exp(double(logits.at(n, cc, y, x)));
    return std::exp(double(logits.at(n, c, y, x))) / denom;
}

// Central differences against the float-rounded probe states actually
// evaluated, so the measured step matches what the loss saw.
template <typename ValueFn>
double gc_fd_error(ValueFn&& value_of, const Tensor4& logits, const Tensor4& grad, double step,
                   double denom_floor = 1e-3) {
    Tensor4 probe = logits;
    double worst = 0.0;
    for (std::int64_t i = 0; i < logits.size(); ++i) {
        const float base = logits.data()[i];
        const float hi = static_cast<float>(double(base) + step);
        const float lo = static_cast<float>(double(base) - step);
        probe.data()[i] = hi;
        const double up = value_of(probe);
        probe.data()[i] = lo;
        const double down = value_of(probe);
        probe.data()[i] = base;
        const double fd = (up - down) / (double(hi) - double(lo));
        const double denom = std::max(std::abs(fd), denom_floor);
        worst = std::max(worst, std::abs(fd - double(grad.data()[i])) / denom);
    }
    return worst;
}

inline std::vector<std::int32_t> gc_labels(std::mt19937& rng, std::size_t count, int num_classes,
                                           int ignore_class, double ignore_share) {
    std::uniform_int_distribution<std::int32_t> cls(0, num_classes - 1);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::vector<std::int32_t> labels(count);
    for (auto& l : labels) {
        if (ignore_class >= 0 && coin(rng) < ignore_share) l = ignore_class;
        else {
            do l = cls(rng); while (l == ignore_class);
        }
    }
    return labels;
}

inline Tensor4 gc_logits(std::mt19937& rng, int c, int h, int w) {
    Tensor4 out(1, c, h, w);
    std::uniform_real_distribution<float> dist(-2.f, 2.f);
    for (float& v : out.data()) v = dist(rng);
    return out;
}

inline bool gc_lovasz_stable(const Tensor4& logits, const std::vector<std::int32_t>& labels,
                             const LossConfig& cfg, double margin) {
    const int C = logits.c(), H = logits.h(), W = logits.w();
    for (int cls = 0; cls < C; ++cls) {
        std::vector<double> m;
        bool present = false;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const std::int32_t l = labels[static_cast<std::size_t>(y) * W + x];
                if (l == cfg.ignore_class) continue;
                const double pc = gc_softmax_at(logits, 0, cls, y, x);
                m.push_back(l == cls ? 1.0 - pc : pc);
                present |= l == cls;
            }
        if (!present) continue;
        std::sort(m.begin(), m.end());
        for (std::size_t i = 1; i < m.size(); ++i)
            if (m[i] - m[i - 1] < margin) return false;
    }
    return true;
}

inline bool gc_boundary_stable(const Tensor4& logits, const std::vector<std::int32_t>& labels,
                               const LossConfig& cfg, double margin) {
    const int C = logits.c(), H = logits.h(), W = logits.w();
    const int radius = (cfg.boundary_theta0 - 1) / 2;
    for (int cls = 0; cls < C; ++cls)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double top = -1.0, second = -1.0;
                bool has_ignored = false;
                for (int dy = -radius; dy <= radius; ++dy)
                    for (int dx = -radius; dx <= radius; ++dx) {
                        const int yy = y + dy, xx = x + dx;
                        if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                        if (labels[static_cast<std::size_t>(yy) * W + xx] == cfg.ignore_class) {
                            has_ignored = true;
                            continue;
                        }
                        const double q = 1.0 - gc_softmax_at(logits, 0, cls, yy, xx);
                        if (q > top) {
                            second = top;
                            top = q;
                        } else {
                            second = std::max(second, q);
                        }
                    }
                if (has_ignored) continue;  // the constant 1 owns this pool
                if (second >= 0.0 && top - second < margin) return false;
            }
    return true;
}

inline LossConfig gc_config(const LossConfig& base, int num_classes, int ignore_class) {
    LossConfig cfg = base;
    const std::vector<float> freqs{0.5f, 0.1f, 0.2f, 0.2f};
    cfg.class_freqs.assign(freqs.begin(), freqs.begin() + num_classes);
    cfg.ignore_class = ignore_class;
    return cfg;
}

}  // namespace detail

// base supplies boundary_theta0, eps, and the loss weights; class counts and
// frequencies are replaced with small fixed instances suited to probing.
inline std::vector<GradCheckResult> run_gradcheck(const LossConfig& base,
                                                  const GradCheckOptions& opt) {
    if (opt.instances < 1) throw std::invalid_argument("gradcheck: instances must be >= 1");
    if (!(opt.step > 0.0)) throw std::invalid_argument("gradcheck: step must be positive");
    for (int d : {opt.wce_h, opt.wce_w, opt.lovasz_h, opt.lovasz_w, opt.boundary_h,
                  opt.boundary_w})
        if (d < 2 || d > 16)
            throw std::invalid_argument("gradcheck: instance sides must be in [2, 16], got " +
                                        std::to_string(d));
    std::mt19937 rng(opt.seed);
    std::vector<GradCheckResult> results;

    auto corrupted = [&](LossOutput out) {
        if (opt.corrupt_index >= 0 && out.grad.size() > 0)
            out.grad.data()[opt.corrupt_index % out.grad.size()] += 0.05f;
        return out;
    };

    {
        GradCheckResult r{"wce", 0, 0.0, opt.tol_wce};
        for (int i = 0; i < opt.instances; ++i) {
            const int ignore = (i % 2) ? 0 : -1;
            const LossConfig cfg = detail::gc_config(base, 4, ignore);
            const Tensor4 logits = detail::gc_logits(rng, 4, opt.wce_h, opt.wce_w);
            const auto labels = detail::gc_labels(
                rng, static_cast<std::size_t>(opt.wce_h) * opt.wce_w, 4, ignore, 0.2);
            const LossOutput out = corrupted(wce_loss(logits, labels, cfg));
            r.max_rel_error = std::max(
                r.max_rel_error,
                detail::gc_fd_error(
                    [&](const Tensor4& t) { return wce_loss(t, labels, cfg).value; }, logits,
                    out.grad, opt.step));
            ++r.instances;
        }
        results.push_back(r);
    }

    {
        GradCheckResult r{"lovasz", 0, 0.0, opt.tol_lovasz};
        for (int attempt = 0; attempt < 100 * opt.instances && r.instances < opt.instances;
             ++attempt) {
            const int ignore = (r.instances % 2) ? 0 : -1;
            const LossConfig cfg = detail::gc_config(base, 3, ignore);
            const Tensor4 logits = detail::gc_logits(rng, 3, opt.lovasz_h, opt.lovasz_w);
            const auto labels = detail::gc_labels(
                rng, static_cast<std::size_t>(opt.lovasz_h) * opt.lovasz_w, 3, ignore, 0.2);
            if (!detail::gc_lovasz_stable(logits, labels, cfg, 2e-3)) continue;
            const LossOutput out = corrupted(lovasz_loss(logits, labels, cfg));
            r.max_rel_error = std::max(
                r.max_rel_error,
                detail::gc_fd_error(
                    [&](const Tensor4& t) { return lovasz_loss(t, labels, cfg).value; }, logits,
                    out.grad, opt.step));
            ++r.instances;
        }
        results.push_back(r);
    }

    {
        GradCheckResult r{"boundary", 0, 0.0, opt.tol_boundary};
        const double step = std::min(opt.step, 5e-4);
        for (int attempt = 0; attempt < 100 * opt.instances && r.instances < opt.instances;
             ++attempt) {
            const int ignore = (r.instances % 3 == 2) ? 0 : -1;
            const int C = (ignore == 0) ? 3 : 2;
            const LossConfig cfg = detail::gc_config(base, C, ignore);
            const Tensor4 logits = detail::gc_logits(rng, C, opt.boundary_h, opt.boundary_w);
            const auto labels = detail::gc_labels(
                rng, static_cast<std::size_t>(opt.boundary_h) * opt.boundary_w, C, ignore, 0.12);
            if (boundary_loss(logits, labels, cfg).value == 0.0) continue;
            if (!detail::gc_boundary_stable(logits, labels, cfg, 2e-3)) continue;
            const LossOutput out = corrupted(boundary_loss(logits, labels, cfg));
            r.max_rel_error = std::max(
                r.max_rel_error,
                detail::gc_fd_error(
                    [&](const Tensor4& t) { return boundary_loss(t, labels, cfg).value; }, logits,
                    out.grad, step));
            ++r.instances;
        }
        results.push_back(r);
    }
    return results;
}

}  // namespace rangeseg
