// Inference kernels: grouped 2D convolution (cross-correlation), bilinear
// upsampling, sliding-window max pooling, channel softmax and folded affine
// normalization.
//
// conv2d accumulates every output element in a fixed order (input channel,
// then kernel row, then kernel column), and parallelism only ever splits
// whole output planes, so repeated runs are bitwise identical.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "rangeseg/tensor.hpp"

namespace rangeseg {

struct ConvSpec {
    int in_channels = 1;
    int out_channels = 1;
    int kernel_h = 1, kernel_w = 1;
    int stride_h = 1, stride_w = 1;
    int pad_h = 0, pad_w = 0;
    int groups = 1;  // groups == in == out gives a depth-wise convolution

    void validate() const {
        if (in_channels < 1 || out_channels < 1)
            throw std::invalid_argument("ConvSpec: channel counts must be >= 1");
        if (kernel_h < 1 || kernel_w < 1)
            throw std::invalid_argument("ConvSpec: kernel dims must be >= 1");
        if (stride_h < 1 || stride_w < 1)
            throw std::invalid_argument("ConvSpec: strides must be >= 1");
        if (pad_h < 0 || pad_w < 0)
            throw std::invalid_argument("ConvSpec: padding must be >= 0");
        if (groups < 1 || in_channels % groups != 0 || out_channels % groups != 0)
            throw std::invalid_argument("ConvSpec: groups (" + std::to_string(groups) +
                                        ") must divide in_channels (" + std::to_string(in_channels) +
                                        ") and out_channels (" + std::to_string(out_channels) + ")");
    }

    int out_h(int in_h) const { return (in_h + 2 * pad_h - kernel_h) / stride_h + 1; }
    int out_w(int in_w) const { return (in_w + 2 * pad_w - kernel_w) / stride_w + 1; }
};

namespace detail {

// Range of output positions ox for which ox*stride + offset lands in [0, limit).
inline void valid_out_range(int offset, int stride, int limit, int out_size,
                            int& lo, int& hi) {
    lo = 0;
    if (offset < 0) lo = (-offset + stride - 1) / stride;
    hi = out_size;
    // largest ox with ox*stride + offset <= limit-1
    const int max_ox = (limit - 1 - offset) / stride;
    if (limit - 1 - offset < 0)
        hi = lo;  // empty
    else if (max_ox + 1 < hi)
        hi = max_ox + 1;
    if (hi < lo) hi = lo;
}

}  // namespace detail

// Cross-correlation (no kernel flip) with zero padding. Weight layout is
// (out_channels, in_channels/groups, kernel_h, kernel_w); bias is per output
// channel and may be empty.
inline Tensor4 conv2d(const Tensor4& input, const Tensor4& weight,
                      const std::vector<float>& bias, const ConvSpec& spec) {
    spec.validate();
    if (input.c() != spec.in_channels)
        throw std::invalid_argument("conv2d: input has " + std::to_string(input.c()) +
                                    " channels, spec expects " + std::to_string(spec.in_channels));
    const int cin_per_group = spec.in_channels / spec.groups;
    const int cout_per_group = spec.out_channels / spec.groups;
    if (weight.n() != spec.out_channels || weight.c() != cin_per_group ||
        weight.h() != spec.kernel_h || weight.w() != spec.kernel_w)
        throw std::invalid_argument("conv2d: weight shape " + weight.shape_str() +
                                    " does not match spec (" + std::to_string(spec.out_channels) +
                                    "x" + std::to_string(cin_per_group) + "x" +
                                    std::to_string(spec.kernel_h) + "x" +
                                    std::to_string(spec.kernel_w) + ")");
    if (!bias.empty() && static_cast<int>(bias.size()) != spec.out_channels)
        throw std::invalid_argument("conv2d: bias has " + std::to_string(bias.size()) +
                                    " entries, expected " + std::to_string(spec.out_channels));
    const int out_h = spec.out_h(input.h());
    const int out_w = spec.out_w(input.w());
    if (out_h < 1 || out_w < 1)
        throw std::invalid_argument("conv2d: invalid geometry, output would be " +
                                    std::to_string(out_h) + "x" + std::to_string(out_w) +
                                    " for input " + input.shape_str());

    Tensor4 out(input.n(), spec.out_channels, out_h, out_w);
    const int in_h = input.h(), in_w = input.w();

    // One task per (batch, out channel) plane.
    parallel_for(static_cast<std::int64_t>(input.n()) * spec.out_channels, [&](std::int64_t task) {
        const int n = static_cast<int>(task / spec.out_channels);
        const int oc = static_cast<int>(task % spec.out_channels);
        const int g = oc / cout_per_group;
        float* const out_plane = out.plane(n, oc);
        const float init = bias.empty() ? 0.f : bias[oc];
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(out_h) * out_w; ++i)
            out_plane[i] = init;
        for (int oy = 0; oy < out_h; ++oy) {
            float* const __restrict__ out_row = out_plane + static_cast<std::size_t>(oy) * out_w;
            for (int icg = 0; icg < cin_per_group; ++icg) {
                const float* const in_plane = input.plane(n, g * cin_per_group + icg);
                for (int ky = 0; ky < spec.kernel_h; ++ky) {
                    const int iy = oy * spec.stride_h - spec.pad_h + ky;
                    if (iy < 0 || iy >= in_h) continue;  // zero padding contributes nothing
                    const float* const in_row = in_plane + static_cast<std::size_t>(iy) * in_w;
                    const float* const w_row =
                        weight.plane(oc, icg) + static_cast<std::size_t>(ky) * spec.kernel_w;
                    for (int kx = 0; kx < spec.kernel_w; ++kx) {
                        const float wv = w_row[kx];
                        const int offset = kx - spec.pad_w;
                        int lo, hi;
                        detail::valid_out_range(offset, spec.stride_w, in_w, out_w, lo, hi);
                        const float* const __restrict__ src = in_row + offset;
                        if (spec.stride_w == 1) {
                            for (int ox = lo; ox < hi; ++ox) out_row[ox] += wv * src[ox];
                        } else {
                            for (int ox = lo; ox < hi; ++ox)
                                out_row[ox] += wv * src[static_cast<std::size_t>(ox) * spec.stride_w];
                        }
                    }
                }
            }
        }
    });
    return out;
}

// Bilinear interpolation with half-pixel source mapping:
//   src = (dst + 0.5) * in/out - 0.5, clamped to [0, in-1].
// Only grows (or keeps) the spatial size; equal sizes reproduce the input
// exactly.
inline Tensor4 bilinear_upsample(const Tensor4& input, int out_h, int out_w) {
    if (out_h < input.h() || out_w < input.w())
        throw std::invalid_argument("bilinear_upsample: shrinking " + input.shape_str() +
                                    " to " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                                    " is unsupported");
    if (out_h == input.h() && out_w == input.w()) return input;

    const int in_h = input.h(), in_w = input.w();
    const double scale_y = static_cast<double>(in_h) / out_h;
    const double scale_x = static_cast<double>(in_w) / out_w;
    std::vector<int> x0(out_w), x1(out_w);
    std::vector<float> wx(out_w);
    for (int ox = 0; ox < out_w; ++ox) {
        double sx = (ox + 0.5) * scale_x - 0.5;
        if (sx < 0.0) sx = 0.0;
        if (sx > in_w - 1) sx = in_w - 1;
        x0[ox] = static_cast<int>(sx);
        x1[ox] = x0[ox] + 1 < in_w ? x0[ox] + 1 : in_w - 1;
        wx[ox] = static_cast<float>(sx - x0[ox]);
    }
    Tensor4 out(input.n(), input.c(), out_h, out_w);
    parallel_for(static_cast<std::int64_t>(input.n()) * input.c(), [&](std::int64_t task) {
        const int n = static_cast<int>(task / input.c());
        const int c = static_cast<int>(task % input.c());
        const float* in_plane = input.plane(n, c);
        float* out_plane = out.plane(n, c);
        for (int oy = 0; oy < out_h; ++oy) {
            double sy = (oy + 0.5) * scale_y - 0.5;
            if (sy < 0.0) sy = 0.0;
            if (sy > in_h - 1) sy = in_h - 1;
            const int y0 = static_cast<int>(sy);
            const int y1 = y0 + 1 < in_h ? y0 + 1 : in_h - 1;
            const float wy = static_cast<float>(sy - y0);
            const float* row0 = in_plane + static_cast<std::size_t>(y0) * in_w;
            const float* row1 = in_plane + static_cast<std::size_t>(y1) * in_w;
            float* out_row = out_plane + static_cast<std::size_t>(oy) * out_w;
            for (int ox = 0; ox < out_w; ++ox) {
                const float top = row0[x0[ox]] + wx[ox] * (row0[x1[ox]] - row0[x0[ox]]);
                const float bot = row1[x0[ox]] + wx[ox] * (row1[x1[ox]] - row1[x0[ox]]);
                out_row[ox] = top + wy * (bot - top);
            }
        }
    });
    return out;
}

// Sliding-window max with stride 1 and (window-1)/2 padding, so the output
// keeps the input size. The padding value is -infinity: borders never see a
// padded maximum.
inline Tensor4 max_pool2d(const Tensor4& input, int window) {
    if (window < 1 || window % 2 == 0)
        throw std::invalid_argument("max_pool2d: window must be odd and >= 1, got " +
                                    std::to_string(window));
    if (window == 1) return input;
    const int radius = (window - 1) / 2;
    const int h = input.h(), w = input.w();
    Tensor4 out(input.n(), input.c(), h, w);
    parallel_for(static_cast<std::int64_t>(input.n()) * input.c(), [&](std::int64_t task) {
        const int n = static_cast<int>(task / input.c());
        const int c = static_cast<int>(task % input.c());
        const float* in_plane = input.plane(n, c);
        float* out_plane = out.plane(n, c);
        for (int y = 0; y < h; ++y) {
            const int y_lo = y - radius < 0 ? 0 : y - radius;
            const int y_hi = y + radius >= h ? h - 1 : y + radius;
            for (int x = 0; x < w; ++x) {
                const int x_lo = x - radius < 0 ? 0 : x - radius;
                const int x_hi = x + radius >= w ? w - 1 : x + radius;
                float best = -std::numeric_limits<float>::infinity();
                for (int yy = y_lo; yy <= y_hi; ++yy) {
                    const float* row = in_plane + static_cast<std::size_t>(yy) * w;
                    for (int xx = x_lo; xx <= x_hi; ++xx)
                        if (row[xx] > best) best = row[xx];
                }
                out_plane[static_cast<std::size_t>(y) * w + x] = best;
            }
        }
    });
    return out;
}

// Per-pixel softmax across the channel axis, stabilized by subtracting the
// channel maximum.
inline Tensor4 softmax_channels(const Tensor4& input) {
    Tensor4 out(input.n(), input.c(), input.h(), input.w());
    const int channels = input.c();
    const std::size_t plane = static_cast<std::size_t>(input.h()) * input.w();
    parallel_for(input.n(), [&](std::int64_t n) {
        const float* in_base = input.plane(static_cast<int>(n), 0);
        float* out_base = out.plane(static_cast<int>(n), 0);
        for (std::size_t px = 0; px < plane; ++px) {
            float max_v = in_base[px];
            for (int c = 1; c < channels; ++c) {
                const float v = in_base[c * plane + px];
                if (v > max_v) max_v = v;
            }
            float sum = 0.f;
            for (int c = 0; c < channels; ++c) {
                const float e = std::exp(in_base[c * plane + px] - max_v);
                out_base[c * plane + px] = e;
                sum += e;
            }
            const float inv = 1.f / sum;
            for (int c = 0; c < channels; ++c) out_base[c * plane + px] *= inv;
        }
    });
    return out;
}

// Folded per-channel affine: out = in * scale[c] + shift[c]. This is the
// inference-time form of a normalization layer with absorbed statistics.
inline Tensor4 affine_norm(const Tensor4& input, const std::vector<float>& scale,
                           const std::vector<float>& shift) {
    if (static_cast<int>(scale.size()) != input.c() ||
        static_cast<int>(shift.size()) != input.c())
        throw std::invalid_argument("affine_norm: scale/shift lengths (" +
                                    std::to_string(scale.size()) + "/" +
                                    std::to_string(shift.size()) + ") must equal channel count " +
                                    std::to_string(input.c()));
    Tensor4 out(input.n(), input.c(), input.h(), input.w());
    const std::size_t plane = static_cast<std::size_t>(input.h()) * input.w();
    parallel_for(static_cast<std::int64_t>(input.n()) * input.c(), [&](std::int64_t task) {
        const int n = static_cast<int>(task / input.c());
        const int c = static_cast<int>(task % input.c());
        const float s = scale[c], b = shift[c];
        const float* src = input.plane(n, c);
        float* dst = out.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * s + b;
    });
    return out;
}

}  // namespace rangeseg
