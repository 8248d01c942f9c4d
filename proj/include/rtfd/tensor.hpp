#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rtfd/errors.hpp"

namespace rtfd {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& s);
std::string shape_to_string(const Shape& s);

namespace autograd {

// One node of the reverse-mode graph. Operations allocate a node per result;
// `parents` lists exactly the nodes whose grad the backward closure writes,
// which is what the topological sweep in backward() relies on.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until the first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::size_t numel() const { return value.size(); }
    std::vector<double>& ensure_grad();
};

bool grad_enabled();
void set_grad_enabled(bool on);

/// Disables graph construction in scope; forward values only. Thread-local.
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

}  // namespace autograd

namespace testing {
// Fault-injection hooks for mutation-sensitivity checks (`verify` command).
struct FaultInjection {
    bool flip_sigmoid_adjoint = false;
};
FaultInjection& faults();
}  // namespace testing

// Dense row-major double tensor participating in a reverse-mode graph.
// Value-semantic handle onto a shared node; copying a Tensor aliases the
// node. Values are immutable once a tensor has graph parents; leaves may be
// edited in place through mutable_values() (parameter init, optimizer steps).
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);
    explicit Tensor(std::shared_ptr<autograd::Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor ones(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int ndim() const { return static_cast<int>(shape().size()); }
    int dim(int i) const;
    std::size_t numel() const;

    const std::vector<double>& values() const;
    /// In-place edit of a leaf's values. Throws on non-leaf tensors.
    std::vector<double>& mutable_values();
    double value_at(std::size_t flat) const { return values()[flat]; }
    /// The single entry of a scalar tensor.
    double item() const;

    bool requires_grad() const;
    void set_requires_grad(bool on);

    /// Gradient buffer, or nullptr if nothing has been accumulated.
    const std::vector<double>* grad() const;
    void zero_grad();

    const std::shared_ptr<autograd::Node>& node() const { return node_; }

private:
    std::shared_ptr<autograd::Node> node_;
};

// ---- arithmetic ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, broadcasting
Tensor scalar_mul(const Tensor& a, double s);
Tensor scalar_add(const Tensor& a, double s);
Tensor matmul(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scalar_mul(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scalar_mul(a, s); }

// ---- elementwise maps ----
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);  // throws DomainError on non-positive entries
Tensor abs(const Tensor& x);
Tensor clamp_min(const Tensor& x, double lo);

// ---- normalization ----
Tensor softmax(const Tensor& x, int axis);
/// Softmax over the flattened H*W positions of a [C,H,W] map, per channel.
Tensor softmax_spatial(const Tensor& x);
Tensor log_softmax(const Tensor& x, int axis);

// ---- reductions ----
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor global_avg_pool(const Tensor& x);  // [C,H,W] -> [C]
Tensor global_max_pool(const Tensor& x);  // [C,H,W] -> [C]; grad to first argmax

// ---- structure ----
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& x, int c_begin, int c_end);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);  // 2-d
Tensor upsample_nearest2(const Tensor& x);
/// 3x3 patch gather with zero padding 1: [C,H,W] -> [C*9, Ho*Wo], one row per
/// (channel, ky, kx) tap and one column per output position.
Tensor im2col3x3(const Tensor& x, int stride);
/// out[h,w] = x[labels[h*W+w], h, w]; labels are class indices.
Tensor select_class(const Tensor& x, const std::vector<int>& labels);

/// Identity on values, constant in every downstream graph.
Tensor stop_gradient(const Tensor& x);

/// Reverse sweep from a scalar loss; accumulates into reachable grads.
void backward(const Tensor& loss);

namespace detail {
// Shared 3x3 gather geometry (zero padding 1): cols has one row per
// (channel, ky, kx) tap, one column per output position.
void im2col_gather(const double* x, int c, int h, int w, int stride, int ho, int wo,
                   double* cols);
void col2im_scatter_acc(const double* cols, int c, int h, int w, int stride, int ho, int wo,
                        double* gx);
}  // namespace detail

}  // namespace rtfd
