#pragma once

#include "rtfd/rng.hpp"
#include "rtfd/tensor.hpp"

namespace rtfd {

// 1x1 convolution: a matmul over the channel axis of the flattened
// [C, H*W] view, plus a per-channel bias.
struct Conv1x1 {
    Tensor w;  // [Cout, Cin]
    Tensor b;  // [Cout]
};

// 3x3 convolution, zero padding 1, realized as an explicit im2col-style
// gather followed by a matmul over the patch taps.
struct Conv3x3 {
    Tensor w;  // [Cout, Cin*9]
    Tensor b;  // [Cout]
    int stride = 1;
};

Tensor conv1x1(const Tensor& x, const Conv1x1& p);
Tensor conv3x3(const Tensor& x, const Conv3x3& p);

/// He-normal initialization (gain sqrt(2/fan_in)), zero bias.
Conv1x1 make_conv1x1(int cin, int cout, Rng& rng);
Conv3x3 make_conv3x3(int cin, int cout, int stride, Rng& rng);

}  // namespace rtfd
