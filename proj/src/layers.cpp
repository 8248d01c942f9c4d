#include "rtfd/layers.hpp"

#include <cmath>
#include <memory>

#include "rtfd/kernels.hpp"

namespace rtfd {

namespace {

const kernels::KernelTable& K() { return kernels::active(); }

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
    const double s = std::sqrt(2.0 / static_cast<double>(fan_in));
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.normal() * s;
    return Tensor(std::move(shape), std::move(v), true);
}

void transpose_buf(const double* src, double* dst, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
    }
}

void add_channel_bias(double* out, const double* b, std::size_t channels, std::size_t spatial) {
    for (std::size_t c = 0; c < channels; ++c) {
        K().add_scalar_acc(out + c * spatial, b[c], spatial);
    }
}

// gb[c] += row sums of g; gw += g . rhs^T; g is [Cout, spatial], rhs is
// [K, spatial]. Shared by the two conv adjoints.
void conv_param_grads(autograd::Node& self, const Tensor& w, const Tensor& b, const double* rhs,
                      std::size_t k, std::size_t spatial) {
    const std::size_t cout = static_cast<std::size_t>(w.dim(0));
    if (b.requires_grad()) {
        auto& gb = b.node()->ensure_grad();
        for (std::size_t c = 0; c < cout; ++c) {
            gb[c] += K().sum(self.grad.data() + c * spatial, spatial);
        }
    }
    if (w.requires_grad()) {
        auto rhs_t = std::make_unique_for_overwrite<double[]>(k * spatial);
        transpose_buf(rhs, rhs_t.get(), k, spatial);
        K().matmul_acc(w.node()->ensure_grad().data(), self.grad.data(), rhs_t.get(), cout,
                       spatial, k);
    }
}

}  // namespace

Tensor conv1x1(const Tensor& x, const Conv1x1& p) {
    const int cout = p.w.dim(0), cin = p.w.dim(1);
    if (x.ndim() != 3 || x.dim(0) != cin) {
        throw ShapeError("conv1x1: input " + shape_to_string(x.shape()) + " does not match " +
                         std::to_string(cin) + " input channels");
    }
    const int h = x.dim(1), w = x.dim(2);
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    std::vector<double> out(static_cast<std::size_t>(cout) * hw);
    K().matmul_set(out.data(), p.w.values().data(), x.values().data(),
                   static_cast<std::size_t>(cout), static_cast<std::size_t>(cin), hw);
    add_channel_bias(out.data(), p.b.values().data(), static_cast<std::size_t>(cout), hw);

    auto node = std::make_shared<autograd::Node>();
    node->shape = {cout, h, w};
    node->value = std::move(out);
    const bool needs = autograd::grad_enabled() &&
                       (x.requires_grad() || p.w.requires_grad() || p.b.requires_grad());
    if (needs) {
        node->requires_grad = true;
        node->parents = {x.node(), p.w.node(), p.b.node()};
        const Tensor xt = x, wt = p.w, bt = p.b;
        node->backward_fn = [xt, wt, bt, cout, cin, hw](autograd::Node& self) {
            conv_param_grads(self, wt, bt, xt.values().data(), static_cast<std::size_t>(cin), hw);
            if (xt.requires_grad()) {
                // gx += w^T . g, written straight into the [Cin, H*W] view
                auto wt_buf = std::make_unique_for_overwrite<double[]>(
                    static_cast<std::size_t>(cin) * cout);
                transpose_buf(wt.values().data(), wt_buf.get(), static_cast<std::size_t>(cout),
                              static_cast<std::size_t>(cin));
                K().matmul_acc(xt.node()->ensure_grad().data(), wt_buf.get(), self.grad.data(),
                               static_cast<std::size_t>(cin), static_cast<std::size_t>(cout), hw);
            }
        };
    }
    return Tensor(std::move(node));
}

Tensor conv3x3(const Tensor& x, const Conv3x3& p) {
    const int cout = p.w.dim(0);
    const int cin = p.w.dim(1) / 9;
    if (x.ndim() != 3 || x.dim(0) != cin) {
        throw ShapeError("conv3x3: input " + shape_to_string(x.shape()) + " does not match " +
                         std::to_string(cin) + " input channels");
    }
    const int h = x.dim(1), w = x.dim(2);
    const int ho = (h + 2 - 3) / p.stride + 1;
    const int wo = (w + 2 - 3) / p.stride + 1;
    const std::size_t hwo = static_cast<std::size_t>(ho) * wo;
    const std::size_t k = static_cast<std::size_t>(cin) * 9;

    auto cols = std::make_unique_for_overwrite<double[]>(k * hwo);
    detail::im2col_gather(x.values().data(), cin, h, w, p.stride, ho, wo, cols.get());
    std::vector<double> out(static_cast<std::size_t>(cout) * hwo);
    K().matmul_set(out.data(), p.w.values().data(), cols.get(), static_cast<std::size_t>(cout), k,
                   hwo);
    add_channel_bias(out.data(), p.b.values().data(), static_cast<std::size_t>(cout), hwo);

    auto node = std::make_shared<autograd::Node>();
    node->shape = {cout, ho, wo};
    node->value = std::move(out);
    const bool needs = autograd::grad_enabled() &&
                       (x.requires_grad() || p.w.requires_grad() || p.b.requires_grad());
    if (needs) {
        node->requires_grad = true;
        node->parents = {x.node(), p.w.node(), p.b.node()};
        const Tensor xt = x, wt = p.w, bt = p.b;
        const int stride = p.stride;
        node->backward_fn = [xt, wt, bt, cols = std::shared_ptr<double[]>(std::move(cols)), cout,
                             cin, h, w, ho, wo, stride, k, hwo](autograd::Node& self) {
            conv_param_grads(self, wt, bt, cols.get(), k, hwo);
            if (xt.requires_grad()) {
                auto wt_buf =
                    std::make_unique_for_overwrite<double[]>(k * static_cast<std::size_t>(cout));
                transpose_buf(wt.values().data(), wt_buf.get(), static_cast<std::size_t>(cout), k);
                auto gcols = std::make_unique_for_overwrite<double[]>(k * hwo);
                K().matmul_set(gcols.get(), wt_buf.get(), self.grad.data(), k,
                               static_cast<std::size_t>(cout), hwo);
                detail::col2im_scatter_acc(gcols.get(), cin, h, w, stride, ho, wo,
                                           xt.node()->ensure_grad().data());
            }
        };
    }
    return Tensor(std::move(node));
}

Conv1x1 make_conv1x1(int cin, int cout, Rng& rng) {
    return Conv1x1{he_normal({cout, cin}, static_cast<std::size_t>(cin), rng),
                   Tensor::zeros({cout}, true)};
}

Conv3x3 make_conv3x3(int cin, int cout, int stride, Rng& rng) {
    return Conv3x3{he_normal({cout, cin * 9}, static_cast<std::size_t>(cin) * 9, rng),
                   Tensor::zeros({cout}, true), stride};
}

}  // namespace rtfd
