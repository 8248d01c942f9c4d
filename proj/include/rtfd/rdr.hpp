#pragma once

#include "rtfd/tensor.hpp"

namespace rtfd {

// One-hot argmax mask over the class axis of a probability map. Gradient-free.
struct ClassMask {
    Tensor m;  // [Cc,H,W], exactly one 1 per pixel
};

/// Per-pixel argmax indicator with smallest-index tie-break. Rejects maps
/// whose pixel columns do not sum to 1 within 1e-4.
ClassMask onehot_mask(const Tensor& p_fuse);

/// L1(sg(p_fuse (*) M), p_rgb) + L1(sg(p_fuse (*) M), p_t), mean-reduced over
/// all entries, scaled by lambda_rdr. No gradient reaches the fused branch.
Tensor rdr_loss(const Tensor& p_fuse, const Tensor& p_rgb, const Tensor& p_t,
                double lambda_rdr = 1.0);

}  // namespace rtfd
