#pragma once

#include <vector>

#include "rtfd/cmdr.hpp"
#include "rtfd/model.hpp"
#include "rtfd/tensor.hpp"

namespace rtfd {

/// Mean over pixels of -log p[label], computed through a stabilized
/// log-softmax of the logits.
Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& labels);

/// Same contract applied directly to a probability map, with the log clamped
/// at a 1e-12 floor.
Tensor cross_entropy_probs(const Tensor& probs, const std::vector<int>& labels);

struct LossWeights {
    double lambda_cmdr = 0.5;
    double lambda_rdr = 1.0;
    double lambda_ce = 1.0;
};

struct LossBreakdown {
    double ce_fuse = 0, ce_rgb = 0, ce_t = 0;
    double cmdr = 0, rdr = 0;
    double total = 0;
};

struct TotalLoss {
    Tensor value;  // scalar
    LossBreakdown breakdown;
};

/// Builds the per-stage decoupled targets from the fused decoder features,
/// using the fused-stream descriptor head of the width-matched fusion scale
/// together with that scale's R and T descriptors.
DecoupledTargets make_decoupled_targets(const BranchOutputs& out,
                                        const std::vector<FusionScaleParams>& fusion);

/// lambda_cmdr * L_CMDR + lambda_rdr * L_RDR + lambda_ce * (CE over the three
/// heads). Zero-weight terms are skipped entirely and report 0.
TotalLoss total_loss(const BranchOutputs& out, const std::vector<int>& labels,
                     const LossWeights& w, const std::vector<FusionScaleParams>& fusion);

}  // namespace rtfd
