// Training losses over a logit image, each returning its value and the
// analytic gradient with respect to the logits:
//  - frequency-weighted cross-entropy, class weight 1/sqrt(freq),
//  - the Lovasz softmax relaxation of the Jaccard loss, averaged over the
//    classes present in the ground truth,
//  - a boundary F-score loss comparing soft prediction boundaries against
//    ground-truth boundaries, averaged over classes whose boundary is
//    non-empty.
// Labels are int32 class ids laid out (batch, row, col). One configurable id
// is ignored: ignored pixels contribute nothing to any value or gradient,
// and no loss value depends on their logits. All internal arithmetic is
// double precision; gradients are emitted as float tensors.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "rangeseg/nn.hpp"
#include "rangeseg/tensor.hpp"

namespace rangeseg {

struct LossConfig {
    std::vector<float> class_freqs;  // per-class prior frequency, sets the wce weights
    int ignore_class = 0;            // class id excluded everywhere; -1 ignores nothing
    int boundary_theta0 = 3;         // odd window of the boundary extraction pool
    double eps = 1e-7;
    double w_wce = 1.0, w_lovasz = 1.5, w_boundary = 1.0;
    std::array<double, 3> aux_weights{1.0, 1.0, 0.5};

    void validate(int num_classes) const {
        if (static_cast<int>(class_freqs.size()) != num_classes)
            throw std::invalid_argument("LossConfig: class_freqs holds " +
                                        std::to_string(class_freqs.size()) + " entries for " +
                                        std::to_string(num_classes) + " classes");
        for (float f : class_freqs)
            if (!(f > 0.f))
                throw std::invalid_argument("LossConfig: class frequencies must be positive");
        if (ignore_class < -1 || ignore_class >= num_classes)
            throw std::invalid_argument("LossConfig: ignore_class " +
                                        std::to_string(ignore_class) + " is outside [-1, " +
                                        std::to_string(num_classes) + ")");
        if (boundary_theta0 < 1 || boundary_theta0 % 2 == 0)
            throw std::invalid_argument("LossConfig: boundary_theta0 must be odd and >= 1, got " +
                                        std::to_string(boundary_theta0));
        if (!(eps > 0.0)) throw std::invalid_argument("LossConfig: eps must be positive");
    }
};

struct LossOutput {
    double value = 0.0;
    Tensor4 grad;  // dL/dlogits, same shape as the logits
};

namespace detail {

inline void check_labels(const Tensor4& logits, const std::vector<std::int32_t>& labels,
                         const LossConfig& cfg) {
    cfg.validate(logits.c());
    const std::size_t expected =
        static_cast<std::size_t>(logits.n()) * logits.h() * logits.w();
    if (labels.size() != expected)
        throw std::invalid_argument("loss: got " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(expected) + " pixels");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const std::int32_t y = labels[i];
        if (y == cfg.ignore_class) continue;
        if (y < 0 || y >= logits.c())
            throw std::invalid_argument("loss: label " + std::to_string(y) + " at pixel " +
                                        std::to_string(i) + " is outside [0, " +
                                        std::to_string(logits.c()) + ")");
    }
}

// Double-precision softmax and log-softmax, laid out like the logit tensor.
struct SoftmaxImage {
    int n, c, h, w;
    std::vector<double> p, log_p;

    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    std::size_t index(int nn, int cc, std::size_t px) const {
        return (static_cast<std::size_t>(nn) * c + cc) * plane() + px;
    }
};

inline SoftmaxImage softmax_double(const Tensor4& logits) {
    SoftmaxImage s{logits.n(), logits.c(), logits.h(), logits.w(), {}, {}};
    s.p.resize(static_cast<std::size_t>(logits.size()));
    s.log_p.resize(s.p.size());
    const std::size_t plane = s.plane();
    const float* z = logits.data().data();
    for (int n = 0; n < s.n; ++n)
        for (std::size_t px = 0; px < plane; ++px) {
            double top = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < s.c; ++c) top = std::max(top, double(z[s.index(n, c, px)]));
            double sum = 0.0;
            for (int c = 0; c < s.c; ++c) sum += std::exp(z[s.index(n, c, px)] - top);
            const double log_z = top + std::log(sum);
            for (int c = 0; c < s.c; ++c) {
                const std::size_t i = s.index(n, c, px);
                s.log_p[i] = z[i] - log_z;
                s.p[i] = std::exp(s.log_p[i]);
            }
        }
    return s;
}

// dL/dz from dL/dp: dz_c = p_c * (dp_c - sum_k p_k dp_k), applied per pixel.
inline Tensor4 softmax_backward(const Tensor4& logits, const SoftmaxImage& sm,
                                const std::vector<double>& dLdp) {
    Tensor4 grad(logits.n(), logits.c(), logits.h(), logits.w());
    const std::size_t plane = sm.plane();
    for (int n = 0; n < sm.n; ++n)
        for (std::size_t px = 0; px < plane; ++px) {
            double dot = 0.0;
            for (int c = 0; c < sm.c; ++c) {
                const std::size_t i = sm.index(n, c, px);
                dot += sm.p[i] * dLdp[i];
            }
            for (int c = 0; c < sm.c; ++c) {
                const std::size_t i = sm.index(n, c, px);
                grad.data()[i] = static_cast<float>(sm.p[i] * (dLdp[i] - dot));
            }
        }
    return grad;
}

}  // namespace detail

inline LossOutput wce_loss(const Tensor4& logits, const std::vector<std::int32_t>& labels,
                           const LossConfig& cfg) {
    detail::check_labels(logits, labels, cfg);
    const detail::SoftmaxImage sm = detail::softmax_double(logits);
    LossOutput out;
    out.grad = Tensor4(logits.n(), logits.c(), logits.h(), logits.w());

    std::vector<double> class_weight(logits.c());
    for (int c = 0; c < logits.c(); ++c)
        class_weight[c] = 1.0 / std::sqrt(static_cast<double>(cfg.class_freqs[c]));

    const std::size_t plane = sm.plane();
    std::int64_t valid = 0;
    for (std::int32_t y : labels)
        if (y != cfg.ignore_class) ++valid;
    if (valid == 0) return out;

    double value = 0.0;
    for (int n = 0; n < sm.n; ++n)
        for (std::size_t px = 0; px < plane; ++px) {
            const std::int32_t y = labels[n * plane + px];
            if (y == cfg.ignore_class) continue;
            const double wy = class_weight[y];
            value -= wy * sm.log_p[sm.index(n, y, px)];
            for (int c = 0; c < sm.c; ++c) {
                const std::size_t i = sm.index(n, c, px);
                const double delta = (c == y) ? 1.0 : 0.0;
                out.grad.data()[i] = static_cast<float>(wy * (sm.p[i] - delta) / valid);
            }
        }
    out.value = value / valid;
    return out;
}

// Jaccard-extension coefficients for one class, from the foreground flags in
// error-sorted order: g[k] = jaccard[k] - jaccard[k-1] with
// jaccard[k] = 1 - (gts - cum_fg[k]) / (gts + cum_bg[k]).
inline std::vector<double> lovasz_grad_coeffs(const std::vector<unsigned char>& fg_sorted) {
    std::vector<double> g(fg_sorted.size(), 0.0);
    double gts = 0.0;
    for (unsigned char f : fg_sorted) gts += f;
    double cum_fg = 0.0, cum_bg = 0.0, prev = 0.0;
    for (std::size_t k = 0; k < fg_sorted.size(); ++k) {
        cum_fg += fg_sorted[k];
        cum_bg += 1.0 - fg_sorted[k];
        const double jac = 1.0 - (gts - cum_fg) / (gts + cum_bg);
        g[k] = jac - prev;
        prev = jac;
    }
    return g;
}

inline LossOutput lovasz_loss(const Tensor4& logits, const std::vector<std::int32_t>& labels,
                              const LossConfig& cfg) {
    detail::check_labels(logits, labels, cfg);
    const detail::SoftmaxImage sm = detail::softmax_double(logits);
    LossOutput out;
    out.grad = Tensor4(logits.n(), logits.c(), logits.h(), logits.w());

    const std::size_t plane = sm.plane();
    struct Pixel {
        int n;
        std::size_t px;
    };
    std::vector<Pixel> valid;
    std::vector<bool> present(sm.c, false);
    for (int n = 0; n < sm.n; ++n)
        for (std::size_t px = 0; px < plane; ++px) {
            const std::int32_t y = labels[n * plane + px];
            if (y == cfg.ignore_class) continue;
            valid.push_back({n, px});
            present[y] = true;
        }
    const int n_present = static_cast<int>(std::count(present.begin(), present.end(), true));
    if (n_present == 0) return out;

    std::vector<double> dLdp(sm.p.size(), 0.0);
    std::vector<double> m(valid.size());
    std::vector<unsigned char> fg(valid.size()), fg_sorted(valid.size());
    std::vector<std::size_t> order(valid.size());

    double value = 0.0;
    for (int cls = 0; cls < sm.c; ++cls) {
        if (!present[cls]) continue;
        for (std::size_t i = 0; i < valid.size(); ++i) {
            const auto [n, px] = valid[i];
            const bool is_fg = labels[n * plane + px] == cls;
            const double pc = sm.p[sm.index(n, cls, px)];
            m[i] = is_fg ? 1.0 - pc : pc;
            fg[i] = is_fg;
        }
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return m[a] != m[b] ? m[a] > m[b] : a < b;  // descending, first index on ties
        });
        for (std::size_t k = 0; k < order.size(); ++k) fg_sorted[k] = fg[order[k]];
        const std::vector<double> g = lovasz_grad_coeffs(fg_sorted);

        double loss_cls = 0.0;
        for (std::size_t k = 0; k < order.size(); ++k) loss_cls += m[order[k]] * g[k];
        value += loss_cls;

        for (std::size_t k = 0; k < order.size(); ++k) {
            const std::size_t i = order[k];
            const auto [n, px] = valid[i];
            const double dLdm = g[k] / n_present;
            dLdp[sm.index(n, cls, px)] += fg[i] ? -dLdm : dLdm;
        }
    }
    out.value = value / n_present;
    out.grad = detail::softmax_backward(logits, sm, dLdp);
    return out;
}

// Boundary map of a binary image: maxpool(1 - y) - (1 - y), stride 1, with
// the window clipped at the borders. Ones mark in-region pixels that touch
// the complement within the window.
inline Tensor4 boundary_image(const Tensor4& binary, int theta0) {
    if (theta0 < 1 || theta0 % 2 == 0)
        throw std::invalid_argument("boundary_image: window must be odd and >= 1, got " +
                                    std::to_string(theta0));
    Tensor4 inverted = binary;
    for (float& v : inverted.data()) v = 1.f - v;
    const Tensor4 pooled = max_pool2d(inverted, theta0);
    Tensor4 out = pooled;
    for (std::int64_t i = 0; i < out.size(); ++i) out.data()[i] -= inverted.data()[i];
    return out;
}

inline LossOutput boundary_loss(const Tensor4& logits, const std::vector<std::int32_t>& labels,
                                const LossConfig& cfg) {
    detail::check_labels(logits, labels, cfg);
    const detail::SoftmaxImage sm = detail::softmax_double(logits);
    LossOutput out;
    out.grad = Tensor4(logits.n(), logits.c(), logits.h(), logits.w());

    const int H = sm.h, W = sm.w;
    const std::size_t plane = sm.plane();
    const int radius = (cfg.boundary_theta0 - 1) / 2;

    std::vector<double> dLdp(sm.p.size(), 0.0);
    std::vector<double> q(sm.n * plane), pooled(sm.n * plane);
    std::vector<std::size_t> argmax(sm.n * plane);
    std::vector<unsigned char> gt(sm.n * plane), yb(sm.n * plane);

    double value = 0.0;
    int contributing = 0;

    for (int cls = 0; cls < sm.c; ++cls) {
        // ground-truth boundary; ignored pixels count as background
        std::int64_t b_sum = 0;
        for (int n = 0; n < sm.n; ++n)
            for (std::size_t px = 0; px < plane; ++px)
                gt[n * plane + px] = labels[n * plane + px] == cls;
        for (int n = 0; n < sm.n; ++n)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const std::size_t o = n * plane + static_cast<std::size_t>(y) * W + x;
                    unsigned char best = 0;
                    for (int dy = -radius; dy <= radius && !best; ++dy)
                        for (int dx = -radius; dx <= radius; ++dx) {
                            const int yy = y + dy, xx = x + dx;
                            if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                            if (!gt[n * plane + static_cast<std::size_t>(yy) * W + xx]) {
                                best = 1;
                                break;
                            }
                        }
                    yb[o] = best && gt[o];  // inside the class, complement within reach
                    b_sum += yb[o];
                }
        if (b_sum == 0) continue;
        ++contributing;

        // soft prediction boundary from masked probabilities: ignored pixels
        // contribute a constant, so the value never depends on their logits
        for (int n = 0; n < sm.n; ++n)
            for (std::size_t px = 0; px < plane; ++px) {
                const bool ignored = labels[n * plane + px] == cfg.ignore_class;
                q[n * plane + px] = ignored ? 1.0 : 1.0 - sm.p[sm.index(n, cls, px)];
            }
        for (int n = 0; n < sm.n; ++n)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const std::size_t o = n * plane + static_cast<std::size_t>(y) * W + x;
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_at = o;
                    for (int dy = -radius; dy <= radius; ++dy)
                        for (int dx = -radius; dx <= radius; ++dx) {
                            const int yy = y + dy, xx = x + dx;
                            if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                            const std::size_t j =
                                n * plane + static_cast<std::size_t>(yy) * W + xx;
                            if (q[j] > best) {  // first row-major maximum wins
                                best = q[j];
                                best_at = j;
                            }
                        }
                    pooled[o] = best;
                    argmax[o] = best_at;
                }

        double s = 0.0, a = 0.0;
        for (std::size_t o = 0; o < pooled.size(); ++o) {
            const double pb = pooled[o] - q[o];
            a += pb;
            if (yb[o]) s += pb;
        }
        const double precision = s / (a + cfg.eps);
        const double recall = s / (b_sum + cfg.eps);
        const double denom = precision + recall + cfg.eps;
        value += 1.0 - 2.0 * precision * recall / denom;

        const double dF_dP = 2.0 * recall * (recall + cfg.eps) / (denom * denom);
        const double dF_dR = 2.0 * precision * (precision + cfg.eps) / (denom * denom);
        const double dval_ds = -(dF_dP / (a + cfg.eps) + dF_dR / (b_sum + cfg.eps));
        const double dval_da = dF_dP * s / ((a + cfg.eps) * (a + cfg.eps));

        // dval/dpb -> dval/dq via the pool routing -> dval/dp via q = 1 - p
        for (std::size_t o = 0; o < pooled.size(); ++o) {
            const double coeff = dval_ds * yb[o] + dval_da;
            const int n = static_cast<int>(o / plane);
            const std::size_t self_px = o % plane;
            const std::size_t peak_px = argmax[o] % plane;
            // dq/dp = -1 at valid pixels, 0 at ignored (q fixed at 1)
            if (labels[o] != cfg.ignore_class)
                dLdp[sm.index(n, cls, self_px)] += coeff;
            if (labels[argmax[o]] != cfg.ignore_class)
                dLdp[sm.index(n, cls, peak_px)] -= coeff;
        }
    }
    if (contributing == 0) return out;

    out.value = value / contributing;
    for (double& d : dLdp) d /= contributing;
    out.grad = detail::softmax_backward(logits, sm, dLdp);
    return out;
}

inline double weighted_total(double wce, double lovasz, double boundary,
                             const LossConfig& cfg) {
    return cfg.w_wce * wce + cfg.w_lovasz * lovasz + cfg.w_boundary * boundary;
}

inline double weighted_total_with_aux(double main_total, const std::array<double, 3>& aux_totals,
                                      const LossConfig& cfg) {
    double value = main_total;
    for (int i = 0; i < 3; ++i) value += cfg.aux_weights[i] * aux_totals[i];
    return value;
}

inline LossOutput total_loss(const Tensor4& logits, const std::vector<std::int32_t>& labels,
                             const LossConfig& cfg) {
    const LossOutput wce = wce_loss(logits, labels, cfg);
    const LossOutput lov = lovasz_loss(logits, labels, cfg);
    const LossOutput bd = boundary_loss(logits, labels, cfg);
    LossOutput out;
    out.value = weighted_total(wce.value, lov.value, bd.value, cfg);
    out.grad = Tensor4(logits.n(), logits.c(), logits.h(), logits.w());
    for (std::int64_t i = 0; i < out.grad.size(); ++i)
        out.grad.data()[i] =
            static_cast<float>(cfg.w_wce * double(wce.grad.data()[i]) +
                               cfg.w_lovasz * double(lov.grad.data()[i]) +
                               cfg.w_boundary * double(bd.grad.data()[i]));
    return out;
}

struct AuxLossOutput {
    double value = 0.0;
    Tensor4 main_grad;
    std::array<Tensor4, 3> aux_grads;
};

// Deep-supervision objective: the weighted three-loss total on the main
// logits plus the scaled totals of the three auxiliary heads.
inline AuxLossOutput total_with_aux(const Tensor4& main_logits,
                                    const std::array<Tensor4, 3>& aux_logits,
                                    const std::vector<std::int32_t>& labels,
                                    const LossConfig& cfg) {
    for (const Tensor4& aux : aux_logits) require_same_shape(main_logits, aux, "total_with_aux");
    const LossOutput main = total_loss(main_logits, labels, cfg);
    AuxLossOutput out;
    out.main_grad = main.grad;
    std::array<double, 3> aux_totals{};
    for (int i = 0; i < 3; ++i) {
        const LossOutput aux = total_loss(aux_logits[i], labels, cfg);
        aux_totals[i] = aux.value;
        out.aux_grads[i] = Tensor4(aux.grad.n(), aux.grad.c(), aux.grad.h(), aux.grad.w());
        for (std::int64_t j = 0; j < aux.grad.size(); ++j)
            out.aux_grads[i].data()[j] =
                static_cast<float>(cfg.aux_weights[i] * double(aux.grad.data()[j]));
    }
    out.value = weighted_total_with_aux(main.value, aux_totals, cfg);
    return out;
}

}  // namespace rangeseg
