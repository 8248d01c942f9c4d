#include "rtfd/sff.hpp"

#include <algorithm>
#include <cmath>

namespace rtfd {

namespace {

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
    const double s = std::sqrt(2.0 / static_cast<double>(fan_in));
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.normal() * s;
    return Tensor(std::move(shape), std::move(v), true);
}

void require_same_chw(const Tensor& a, const Tensor& b, const char* op) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": streams must share [C,H,W], got " +
                         shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
    }
}

}  // namespace

DescriptorMlp make_descriptor_mlp(int channels, Rng& rng) {
    const int hidden = std::max(channels / 4, 4);
    DescriptorMlp mlp;
    mlp.w1 = he_normal({channels, hidden}, static_cast<std::size_t>(channels), rng);
    mlp.b1 = Tensor::zeros({hidden}, true);
    mlp.w2 = he_normal({hidden, channels}, static_cast<std::size_t>(hidden), rng);
    mlp.b2 = Tensor::zeros({channels}, true);
    return mlp;
}

FusionScaleParams make_fusion_scale(FusionKind kind, int channels, Rng& rng) {
    FusionScaleParams p;
    p.kind = kind;
    p.channels = channels;
    p.rgb_mlp = make_descriptor_mlp(channels, rng);
    p.t_mlp = make_descriptor_mlp(channels, rng);
    p.fused_mlp = make_descriptor_mlp(channels, rng);
    if (kind == FusionKind::Sff) {
        p.merge = make_conv1x1(2 * channels, 2 * channels, rng);
    } else {
        p.proj_rgb = make_conv1x1(channels, channels, rng);
        p.proj_t = make_conv1x1(channels, channels, rng);
    }
    return p;
}

ChannelDescriptor descriptor_of(const Tensor& f, DescriptorSource which,
                                const FusionScaleParams& p) {
    const DescriptorMlp& mlp = which == DescriptorSource::Rgb       ? p.rgb_mlp
                               : which == DescriptorSource::Thermal ? p.t_mlp
                                                                    : p.fused_mlp;
    if (f.ndim() != 3 || f.dim(0) != mlp.in_channels()) {
        throw ShapeError("descriptor_of: feature " + shape_to_string(f.shape()) +
                         " does not match descriptor width " + std::to_string(mlp.in_channels()));
    }
    const int c = f.dim(0);
    const int hidden = mlp.b1.dim(0);
    Tensor pooled = scalar_mul(add(global_avg_pool(f), global_max_pool(f)), 0.5);  // [C]
    Tensor h = relu(add(matmul(reshape(pooled, {1, c}), mlp.w1), reshape(mlp.b1, {1, hidden})));
    Tensor out = add(matmul(h, mlp.w2), reshape(mlp.b2, {1, c}));
    return ChannelDescriptor{reshape(out, {c}), which};
}

Tensor exchange_gate(const ChannelDescriptor& r, const ChannelDescriptor& t) {
    if (r.channels() != t.channels()) {
        throw ShapeError("exchange_gate: descriptor lengths differ, " +
                         std::to_string(r.channels()) + " vs " + std::to_string(t.channels()));
    }
    return scalar_add(scalar_mul(sigmoid(mul(t.values, r.values)), -1.0), 1.0);
}

std::pair<Tensor, Tensor> gated_exchange(const Tensor& f_rgb, const Tensor& f_t,
                                         const ChannelDescriptor& r, const ChannelDescriptor& t) {
    require_same_chw(f_rgb, f_t, "gated_exchange");
    if (r.channels() != f_rgb.dim(0) || t.channels() != f_rgb.dim(0)) {
        throw ShapeError("gated_exchange: descriptor length does not match channel count " +
                         std::to_string(f_rgb.dim(0)));
    }
    Tensor gate = exchange_gate(r, t);  // shared for both directions
    return {add(f_rgb, mul(gate, f_t)), add(f_t, mul(gate, f_rgb))};
}

std::pair<Tensor, Tensor> merge_attention(const Tensor& fp_rgb, const Tensor& fp_t,
                                          const FusionScaleParams& p) {
    require_same_chw(fp_rgb, fp_t, "merge_attention");
    const int c = fp_rgb.dim(0);
    const double hw = static_cast<double>(fp_rgb.dim(1)) * fp_rgb.dim(2);
    Tensor mixed = conv1x1(concat_channels(fp_rgb, fp_t), p.merge);  // [2C,H,W]
    Tensor att_rgb = scalar_mul(softmax_spatial(slice_channels(mixed, 0, c)), hw);
    Tensor att_t = scalar_mul(softmax_spatial(slice_channels(mixed, c, 2 * c)), hw);
    return {mul(fp_rgb, att_rgb), mul(fp_t, att_t)};
}

Tensor fuse(const Tensor& a, const Tensor& b) {
    require_same_chw(a, b, "fuse");
    return add(a, b);
}

FusionOutput sff_forward(const Tensor& f_rgb, const Tensor& f_t, const FusionScaleParams& p) {
    require_same_chw(f_rgb, f_t, "sff_forward");
    ChannelDescriptor r = descriptor_of(f_rgb, DescriptorSource::Rgb, p);
    ChannelDescriptor t = descriptor_of(f_t, DescriptorSource::Thermal, p);
    auto [ep_rgb, ep_t] = gated_exchange(f_rgb, f_t, r, t);
    auto [em_rgb, em_t] = merge_attention(ep_rgb, ep_t, p);
    return FusionOutput{fuse(em_rgb, em_t), std::move(r), std::move(t)};
}

FusionOutput add_fusion_forward(const Tensor& f_rgb, const Tensor& f_t,
                                const FusionScaleParams& p) {
    require_same_chw(f_rgb, f_t, "add_fusion_forward");
    ChannelDescriptor r = descriptor_of(f_rgb, DescriptorSource::Rgb, p);
    ChannelDescriptor t = descriptor_of(f_t, DescriptorSource::Thermal, p);
    Tensor fused = add(conv1x1(f_rgb, p.proj_rgb), conv1x1(f_t, p.proj_t));
    return FusionOutput{std::move(fused), std::move(r), std::move(t)};
}

FusionOutput fusion_forward(const Tensor& f_rgb, const Tensor& f_t, const FusionScaleParams& p) {
    return p.kind == FusionKind::Sff ? sff_forward(f_rgb, f_t, p)
                                     : add_fusion_forward(f_rgb, f_t, p);
}

}  // namespace rtfd
