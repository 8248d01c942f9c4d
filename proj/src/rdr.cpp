#include "rtfd/rdr.hpp"

#include <cmath>

namespace rtfd {

ClassMask onehot_mask(const Tensor& p_fuse) {
    if (p_fuse.ndim() != 3) {
        throw ShapeError("onehot_mask: expected [Cc,H,W], got " + shape_to_string(p_fuse.shape()));
    }
    const int c = p_fuse.dim(0);
    const std::size_t hw =
        static_cast<std::size_t>(p_fuse.dim(1)) * static_cast<std::size_t>(p_fuse.dim(2));
    const auto& pv = p_fuse.values();
    std::vector<double> m(pv.size(), 0.0);
    for (std::size_t p = 0; p < hw; ++p) {
        double total = 0.0;
        int best = 0;
        for (int ch = 0; ch < c; ++ch) {
            const double v = pv[static_cast<std::size_t>(ch) * hw + p];
            total += v;
            if (v > pv[static_cast<std::size_t>(best) * hw + p]) best = ch;
        }
        if (std::fabs(total - 1.0) > 1e-4) {
            throw DomainError("onehot_mask: pixel " + std::to_string(p) +
                              " is not normalized (sum " + std::to_string(total) + ")");
        }
        m[static_cast<std::size_t>(best) * hw + p] = 1.0;
    }
    return ClassMask{Tensor(p_fuse.shape(), std::move(m))};
}

Tensor rdr_loss(const Tensor& p_fuse, const Tensor& p_rgb, const Tensor& p_t, double lambda_rdr) {
    if (p_fuse.shape() != p_rgb.shape() || p_fuse.shape() != p_t.shape()) {
        throw ShapeError("rdr_loss: probability maps must share a shape, got " +
                         shape_to_string(p_fuse.shape()) + ", " + shape_to_string(p_rgb.shape()) +
                         ", " + shape_to_string(p_t.shape()));
    }
    ClassMask mask = onehot_mask(p_fuse);
    Tensor target = stop_gradient(mul(p_fuse, mask.m));
    Tensor l = add(mean(abs(sub(target, p_rgb))), mean(abs(sub(target, p_t))));
    return scalar_mul(l, lambda_rdr);
}

}  // namespace rtfd
