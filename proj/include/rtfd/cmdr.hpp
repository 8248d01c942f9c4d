#pragma once

#include <vector>

#include "rtfd/sff.hpp"
#include "rtfd/tensor.hpp"

namespace rtfd {

// Per-stage decoupled supervision targets. Both tensors are detached: they
// were produced under stop_gradient and carry no upstream edges.
struct StageTargets {
    Tensor rgb, t;
};

struct DecoupledTargets {
    std::vector<StageTargets> stages;
};

/// Binary per-channel gate: 1 where F[c]*X[c] > 0, else 0 (exact zero counts
/// as non-positive). Constant: no gradient flows through it.
std::vector<double> sign_consistency_gate(const ChannelDescriptor& f, const ChannelDescriptor& x);

/// Masks the fused feature by the sign-consistency gate for each modality and
/// detaches both results.
StageTargets decouple(const Tensor& f_fuse, const ChannelDescriptor& f, const ChannelDescriptor& r,
                      const ChannelDescriptor& t);

/// Sum over stages of the mean-squared gap between each unimodal stage
/// feature and its detached target, both modalities.
Tensor cmdr_loss(const DecoupledTargets& targets, const std::vector<Tensor>& rgb_stages,
                 const std::vector<Tensor>& t_stages);

}  // namespace rtfd
