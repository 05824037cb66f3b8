// The segmentation network. A three-conv stem and four residual stages read
// the range image; every block applies multi-scale convolutional attention,
// built from a 5x5 depth-wise local conv, parallel pairs of strip convs
// (1xs then sx1), and a pointwise mix whose output gates the block input.
// The decoder upsamples each stage back to full resolution and fuses it with
// the running feature map through a 3x3 conv. The main head classifies the
// concatenation of the three shallowest fused maps; three auxiliary heads
// classify the deeper ones.
//
// Weights live in a TensorStore under hierarchical names (stem.conv0.weight,
// stage2.block0.msca.mix.bias, iac3.fuse.norm_scale, head.fuse.weight, ...).
// Convolutions followed by a norm carry no bias; the attention convs and the
// heads carry biases and no norm.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rangeseg/nn.hpp"
#include "rangeseg/tensor.hpp"
#include "rangeseg/weights.hpp"

namespace rangeseg {

struct ModelConfig {
    int in_channels = 5;
    int num_classes = 20;
    std::array<int, 4> stage_blocks{3, 4, 6, 3};
    std::array<int, 4> stage_widths{64, 128, 128, 256};
    int decoder_width = 64;
    int msca_local = 5;                      // odd side of the local depth-wise conv
    std::vector<int> msca_branches{7, 11, 21};  // odd strip lengths, strictly increasing

    void validate() const {
        if (in_channels < 1) throw std::invalid_argument("ModelConfig: in_channels must be >= 1");
        if (num_classes < 2) throw std::invalid_argument("ModelConfig: num_classes must be >= 2");
        if (decoder_width < 1)
            throw std::invalid_argument("ModelConfig: decoder_width must be >= 1");
        for (int b : stage_blocks)
            if (b < 1) throw std::invalid_argument("ModelConfig: every stage needs >= 1 block");
        for (int w : stage_widths)
            if (w < 1) throw std::invalid_argument("ModelConfig: stage widths must be >= 1");
        if (msca_local < 1 || msca_local % 2 == 0)
            throw std::invalid_argument("ModelConfig: msca_local must be odd and >= 1, got " +
                                        std::to_string(msca_local));
        int prev = 0;
        for (int b : msca_branches) {
            if (b < 1 || b % 2 == 0)
                throw std::invalid_argument(
                    "ModelConfig: msca branch sizes must be odd and >= 1, got " +
                    std::to_string(b));
            if (b <= prev)
                throw std::invalid_argument(
                    "ModelConfig: msca branch sizes must be strictly increasing");
            prev = b;
        }
    }
};

struct TensorSpec {
    std::string name;
    std::vector<int> shape;
};

namespace detail {

inline void plan_conv_norm(std::vector<TensorSpec>& plan, const std::string& prefix, int in_c,
                           int out_c, int k) {
    plan.push_back({prefix + ".weight", {out_c, in_c, k, k}});
    plan.push_back({prefix + ".norm_scale", {out_c}});
    plan.push_back({prefix + ".norm_shift", {out_c}});
}

inline void plan_msca(std::vector<TensorSpec>& plan, const std::string& prefix, int c,
                      const ModelConfig& cfg) {
    plan.push_back({prefix + ".local.weight", {c, 1, cfg.msca_local, cfg.msca_local}});
    plan.push_back({prefix + ".local.bias", {c}});
    for (int b : cfg.msca_branches) {
        const std::string base = prefix + ".branch" + std::to_string(b);
        plan.push_back({base + ".a.weight", {c, 1, 1, b}});
        plan.push_back({base + ".a.bias", {c}});
        plan.push_back({base + ".b.weight", {c, 1, b, 1}});
        plan.push_back({base + ".b.bias", {c}});
    }
    plan.push_back({prefix + ".mix.weight", {c, c, 1, 1}});
    plan.push_back({prefix + ".mix.bias", {c}});
}

inline void plan_head(std::vector<TensorSpec>& plan, const std::string& prefix, int in_c,
                      int out_c) {
    plan.push_back({prefix + ".weight", {out_c, in_c, 1, 1}});
    plan.push_back({prefix + ".bias", {out_c}});
}

}  // namespace detail

// Every tensor the model needs, in architectural order.
inline std::vector<TensorSpec> weight_plan(const ModelConfig& cfg) {
    cfg.validate();
    std::vector<TensorSpec> plan;
    const int stem = cfg.stage_widths[0];
    detail::plan_conv_norm(plan, "stem.conv0", cfg.in_channels, stem, 3);
    detail::plan_conv_norm(plan, "stem.conv1", stem, stem, 3);
    detail::plan_conv_norm(plan, "stem.conv2", stem, stem, 3);

    int in_c = stem;
    for (int s = 0; s < 4; ++s) {
        const int out_c = cfg.stage_widths[s];
        for (int b = 0; b < cfg.stage_blocks[s]; ++b) {
            const std::string prefix =
                "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
            const int stride = (s > 0 && b == 0) ? 2 : 1;
            const int block_in = (b == 0) ? in_c : out_c;
            detail::plan_conv_norm(plan, prefix + ".conv", block_in, out_c, 3);
            if (stride != 1 || block_in != out_c) {
                plan.push_back({prefix + ".proj.weight", {out_c, block_in, 1, 1}});
                plan.push_back({prefix + ".proj.norm_scale", {out_c}});
                plan.push_back({prefix + ".proj.norm_shift", {out_c}});
            }
            detail::plan_msca(plan, prefix + ".msca", out_c, cfg);
        }
        in_c = out_c;
    }

    // decoder order: iac1 reads stage 4, iac2 stage 3, iac3 stage 2, iac4 stage 1
    const int dw = cfg.decoder_width;
    detail::plan_conv_norm(plan, "iac1.fuse", cfg.stage_widths[3], dw, 3);
    detail::plan_conv_norm(plan, "iac2.fuse", cfg.stage_widths[2] + dw, dw, 3);
    detail::plan_conv_norm(plan, "iac3.fuse", cfg.stage_widths[1] + dw, dw, 3);
    detail::plan_conv_norm(plan, "iac4.fuse", cfg.stage_widths[0] + dw, dw, 3);

    detail::plan_head(plan, "head.fuse", 3 * dw, cfg.num_classes);
    for (int k = 1; k <= 3; ++k)
        detail::plan_head(plan, "aux" + std::to_string(k) + ".head", dw, cfg.num_classes);
    return plan;
}

inline std::int64_t param_count(const ModelConfig& cfg) {
    std::int64_t total = 0;
    for (const TensorSpec& spec : weight_plan(cfg))
        total += static_cast<std::int64_t>(numel(spec.shape));
    return total;
}

// Parameter totals grouped by top-level module, in architectural order.
inline std::vector<std::pair<std::string, std::int64_t>> param_breakdown(const ModelConfig& cfg) {
    std::vector<std::pair<std::string, std::int64_t>> groups{
        {"stem", 0},    {"stage1", 0}, {"stage2", 0}, {"stage3", 0},
        {"stage4", 0},  {"decoder", 0}, {"heads", 0}};
    for (const TensorSpec& spec : weight_plan(cfg)) {
        const std::string top = spec.name.substr(0, spec.name.find('.'));
        std::string key = "heads";
        if (top == "stem" || top.starts_with("stage")) key = top;
        else if (top.starts_with("iac")) key = "decoder";
        for (auto& [name, count] : groups)
            if (name == key) count += static_cast<std::int64_t>(numel(spec.shape));
    }
    return groups;
}

// Fan-in scaled uniform init: weights are drawn from [-1/sqrt(fan_in),
// 1/sqrt(fan_in)), biases and norm shifts start at zero, norm scales at one.
// Draws consume one mt19937 word per value in weight_plan order, so the
// result is identical on every platform.
inline TensorStore init_random(const ModelConfig& cfg, std::uint32_t seed) {
    std::mt19937 rng(seed);
    TensorStore store;
    for (const TensorSpec& spec : weight_plan(cfg)) {
        NamedTensor tensor;
        tensor.shape = spec.shape;
        tensor.values.assign(numel(spec.shape), 0.f);
        if (spec.name.ends_with(".weight")) {
            std::size_t fan_in = 1;
            for (std::size_t d = 1; d < spec.shape.size(); ++d)
                fan_in *= static_cast<std::size_t>(spec.shape[d]);
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (float& v : tensor.values) {
                const double u = rng() * 0x1p-32;  // [0, 1)
                v = static_cast<float>((2.0 * u - 1.0) * bound);
            }
        } else if (spec.name.ends_with(".norm_scale")) {
            std::fill(tensor.values.begin(), tensor.values.end(), 1.f);
        }
        store.emplace(spec.name, std::move(tensor));
    }
    return store;
}

// Strict structural check: the store must hold exactly the planned tensors
// with exactly the planned shapes.
inline void validate_weights(const ModelConfig& cfg, const TensorStore& store) {
    std::vector<std::string> problems;
    std::set<std::string> planned;
    for (const TensorSpec& spec : weight_plan(cfg)) {
        planned.insert(spec.name);
        const auto it = store.find(spec.name);
        if (it == store.end())
            problems.push_back("missing tensor '" + spec.name + "'");
        else if (it->second.shape != spec.shape)
            problems.push_back("tensor '" + spec.name + "' has shape " +
                               shape_string(it->second.shape) + ", expected " +
                               shape_string(spec.shape));
    }
    for (const auto& [name, tensor] : store)
        if (!planned.count(name)) problems.push_back("unexpected tensor '" + name + "'");
    if (problems.empty()) return;

    std::string msg =
        "weights do not match the model (" + std::to_string(problems.size()) + " problems):";
    const std::size_t shown = std::min<std::size_t>(problems.size(), 8);
    for (std::size_t i = 0; i < shown; ++i) msg += "\n  " + problems[i];
    if (problems.size() > shown) msg += "\n  ...";
    throw std::runtime_error(msg);
}

namespace detail {

inline const NamedTensor& fetch(const TensorStore& store, const std::string& name) {
    const auto it = store.find(name);
    if (it == store.end()) throw std::runtime_error("missing tensor '" + name + "'");
    return it->second;
}

inline Tensor4 conv_tensor(const TensorStore& store, const std::string& name) {
    const NamedTensor& t = fetch(store, name);
    if (t.shape.size() != 4)
        throw std::runtime_error("tensor '" + name + "' has shape " + shape_string(t.shape) +
                                 ", expected a rank-4 convolution kernel");
    return Tensor4::from_data(t.shape[0], t.shape[1], t.shape[2], t.shape[3], t.values);
}

inline Tensor4 conv_norm(const Tensor4& x, const TensorStore& w, const std::string& prefix,
                         int stride, int pad) {
    const Tensor4 kernel = conv_tensor(w, prefix + ".weight");
    ConvSpec spec;
    spec.in_channels = kernel.c();
    spec.out_channels = kernel.n();
    spec.kernel_h = kernel.h();
    spec.kernel_w = kernel.w();
    spec.stride_h = spec.stride_w = stride;
    spec.pad_h = spec.pad_w = pad;
    const Tensor4 out = conv2d(x, kernel, {}, spec);
    return affine_norm(out, fetch(w, prefix + ".norm_scale").values,
                       fetch(w, prefix + ".norm_shift").values);
}

inline Tensor4 conv_norm_relu(const Tensor4& x, const TensorStore& w, const std::string& prefix,
                              int stride, int pad) {
    return relu(conv_norm(x, w, prefix, stride, pad));
}

// Depth-wise conv with bias; padding keeps the spatial size.
inline Tensor4 depthwise(const Tensor4& x, const TensorStore& w, const std::string& prefix) {
    const Tensor4 kernel = conv_tensor(w, prefix + ".weight");
    ConvSpec spec;
    spec.in_channels = x.c();
    spec.out_channels = x.c();
    spec.groups = x.c();
    spec.kernel_h = kernel.h();
    spec.kernel_w = kernel.w();
    spec.pad_h = (kernel.h() - 1) / 2;
    spec.pad_w = (kernel.w() - 1) / 2;
    return conv2d(x, kernel, fetch(w, prefix + ".bias").values, spec);
}

// 1x1 conv with bias.
inline Tensor4 pointwise(const Tensor4& x, const TensorStore& w, const std::string& prefix) {
    const Tensor4 kernel = conv_tensor(w, prefix + ".weight");
    ConvSpec spec;
    spec.in_channels = kernel.c();
    spec.out_channels = kernel.n();
    return conv2d(x, kernel, fetch(w, prefix + ".bias").values, spec);
}

}  // namespace detail

// Multi-scale convolutional attention: gate the input with a pointwise mix
// of the local context and the strip-conv branches.
inline Tensor4 msca_forward(const Tensor4& x, const TensorStore& w, const std::string& prefix,
                            const ModelConfig& cfg) {
    const Tensor4 local = detail::depthwise(x, w, prefix + ".local");
    Tensor4 sum = local;
    for (int b : cfg.msca_branches) {
        const std::string base = prefix + ".branch" + std::to_string(b);
        const Tensor4 row = detail::depthwise(local, w, base + ".a");
        sum = elementwise_add(sum, detail::depthwise(row, w, base + ".b"));
    }
    const Tensor4 attn = detail::pointwise(sum, w, prefix + ".mix");
    return elementwise_mul(attn, x);
}

// Residual block: relu(residual(x) + msca(relu(norm(conv3x3(x))))). The
// residual is the identity unless the block strides or changes width, in
// which case it is a strided 1x1 projection with its own norm.
inline Tensor4 basic_block_forward(const Tensor4& x, const TensorStore& w,
                                   const std::string& prefix, int out_channels, int stride,
                                   const ModelConfig& cfg) {
    Tensor4 feat = detail::conv_norm_relu(x, w, prefix + ".conv", stride, 1);
    feat = msca_forward(feat, w, prefix + ".msca", cfg);
    const bool project = stride != 1 || x.c() != out_channels;
    const Tensor4 residual = project ? detail::conv_norm(x, w, prefix + ".proj", stride, 0) : x;
    return relu(elementwise_add(residual, feat));
}

// Stem plus the four stages; returns each stage's output, shallow to deep.
// Stages 2 to 4 halve the spatial size in their first block.
inline std::array<Tensor4, 4> encoder_forward(const Tensor4& x, const TensorStore& w,
                                              const ModelConfig& cfg) {
    if (x.c() != cfg.in_channels)
        throw std::invalid_argument("encoder_forward: input has " + std::to_string(x.c()) +
                                    " channels, the model expects " +
                                    std::to_string(cfg.in_channels));
    Tensor4 feat = detail::conv_norm_relu(x, w, "stem.conv0", 1, 1);
    feat = detail::conv_norm_relu(feat, w, "stem.conv1", 1, 1);
    feat = detail::conv_norm_relu(feat, w, "stem.conv2", 1, 1);

    std::array<Tensor4, 4> stages;
    for (int s = 0; s < 4; ++s) {
        for (int b = 0; b < cfg.stage_blocks[s]; ++b) {
            const std::string prefix =
                "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
            const int stride = (s > 0 && b == 0) ? 2 : 1;
            feat = basic_block_forward(feat, w, prefix, cfg.stage_widths[s], stride, cfg);
        }
        stages[s] = feat;
    }
    return stages;
}

// One decoder step: upsample the encoder feature to full resolution, stack
// it on the previous decoder output if there is one, and fuse with a 3x3.
inline Tensor4 iac_forward(const Tensor4& enc_feat, const Tensor4* prev, int out_h, int out_w,
                           const TensorStore& w, const std::string& prefix) {
    Tensor4 up = bilinear_upsample(enc_feat, out_h, out_w);
    const Tensor4 fused = prev ? concat_channels({&up, prev}) : std::move(up);
    return detail::conv_norm_relu(fused, w, prefix + ".fuse", 1, 1);
}

struct ModelOutput {
    Tensor4 main_logits;
    std::array<Tensor4, 3> aux_logits;  // heads on the first three decoder steps
};

inline ModelOutput model_forward(const Tensor4& x, const TensorStore& w,
                                 const ModelConfig& cfg) {
    cfg.validate();
    const std::array<Tensor4, 4> stages = encoder_forward(x, w, cfg);
    const int h = x.h(), wd = x.w();
    const Tensor4 iac1 = iac_forward(stages[3], nullptr, h, wd, w, "iac1");
    const Tensor4 iac2 = iac_forward(stages[2], &iac1, h, wd, w, "iac2");
    const Tensor4 iac3 = iac_forward(stages[1], &iac2, h, wd, w, "iac3");
    const Tensor4 iac4 = iac_forward(stages[0], &iac3, h, wd, w, "iac4");

    const Tensor4 fused = concat_channels({&iac2, &iac3, &iac4});
    ModelOutput out;
    out.main_logits = detail::pointwise(fused, w, "head.fuse");
    out.aux_logits = {detail::pointwise(iac1, w, "aux1.head"),
                      detail::pointwise(iac2, w, "aux2.head"),
                      detail::pointwise(iac3, w, "aux3.head")};
    return out;
}

}  // namespace rangeseg
