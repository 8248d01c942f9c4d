#pragma once

#include <utility>

#include "rtfd/layers.hpp"
#include "rtfd/tensor.hpp"

namespace rtfd {

enum class DescriptorSource { Rgb, Thermal, Fused };

// Per-channel summary of one feature stream: MLP(0.5*(GAP(f) + GMP(f))).
struct ChannelDescriptor {
    Tensor values;  // [C]
    DescriptorSource source = DescriptorSource::Rgb;

    int channels() const { return values.dim(0); }
};

// Two-layer perceptron C -> max(C/4, 4) -> C, relu between layers, no output
// activation.
struct DescriptorMlp {
    Tensor w1, b1;  // [C, hidden], [hidden]
    Tensor w2, b2;  // [hidden, C], [C]

    int in_channels() const { return w1.dim(0); }
};

DescriptorMlp make_descriptor_mlp(int channels, Rng& rng);

enum class FusionKind { Sff, AdditionProjection };

// Parameters of one fusion block at one encoder scale. The descriptor heads
// exist for both kinds (the decouple gates need R, T, F either way); merge is
// the SFF 2C->2C mixing conv, proj_* the plain-addition 1x1 projections.
struct FusionScaleParams {
    FusionKind kind = FusionKind::Sff;
    int channels = 0;
    DescriptorMlp rgb_mlp, t_mlp, fused_mlp;
    Conv1x1 merge;             // Sff only
    Conv1x1 proj_rgb, proj_t;  // AdditionProjection only
};

FusionScaleParams make_fusion_scale(FusionKind kind, int channels, Rng& rng);

ChannelDescriptor descriptor_of(const Tensor& f, DescriptorSource which,
                                const FusionScaleParams& p);

/// The shared cross-modal gate 1 - sigmoid(T (.) R), one entry per channel.
Tensor exchange_gate(const ChannelDescriptor& r, const ChannelDescriptor& t);

/// f'_rgb = f_rgb + gate (*) f_t and symmetrically, with the shared gate.
std::pair<Tensor, Tensor> gated_exchange(const Tensor& f_rgb, const Tensor& f_t,
                                         const ChannelDescriptor& r, const ChannelDescriptor& t);

/// concat -> 1x1 conv (2C->2C) -> split -> per-channel spatial softmax scaled
/// by H*W -> elementwise product with each stream.
std::pair<Tensor, Tensor> merge_attention(const Tensor& fp_rgb, const Tensor& fp_t,
                                          const FusionScaleParams& p);

Tensor fuse(const Tensor& a, const Tensor& b);

struct FusionOutput {
    Tensor f_fuse;
    ChannelDescriptor r, t;
};

FusionOutput sff_forward(const Tensor& f_rgb, const Tensor& f_t, const FusionScaleParams& p);
FusionOutput add_fusion_forward(const Tensor& f_rgb, const Tensor& f_t,
                                const FusionScaleParams& p);
FusionOutput fusion_forward(const Tensor& f_rgb, const Tensor& f_t, const FusionScaleParams& p);

}  // namespace rtfd
