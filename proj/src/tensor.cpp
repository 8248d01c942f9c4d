#include "rtfd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "rtfd/kernels.hpp"

namespace rtfd {

namespace {
const kernels::KernelTable& K() { return kernels::active(); }
}

// ---------------------------------------------------------------------------
// shapes
// ---------------------------------------------------------------------------

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_to_string(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

// ---------------------------------------------------------------------------
// autograd plumbing
// ---------------------------------------------------------------------------

namespace autograd {

std::vector<double>& Node::ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

}  // namespace autograd

namespace testing {
FaultInjection& faults() {
    static FaultInjection f;
    return f;
}
}  // namespace testing

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

namespace {

using autograd::Node;
using NodePtr = std::shared_ptr<Node>;

NodePtr make_node(Shape shape, std::vector<double> value) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    return n;
}

bool track(std::initializer_list<const Tensor*> parents) {
    if (!autograd::grad_enabled()) return false;
    for (const Tensor* p : parents) {
        if (p->defined() && p->requires_grad()) return true;
    }
    return false;
}

void attach(const NodePtr& n, std::initializer_list<const Tensor*> parents,
            std::function<void(Node&)> bw) {
    n->requires_grad = true;
    for (const Tensor* p : parents) n->parents.push_back(p->node());
    n->backward_fn = std::move(bw);
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor: non-positive extent in shape " + shape_to_string(shape));
    }
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("tensor: shape " + shape_to_string(shape) + " expects " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
    }
    node_ = make_node(std::move(shape), std::move(data));
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::ones(Shape shape) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 1.0));
}

Tensor Tensor::full(Shape shape, double v) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

const Shape& Tensor::shape() const { return node_->shape; }

int Tensor::dim(int i) const {
    if (i < 0 || i >= ndim()) {
        throw ShapeError("dim: axis " + std::to_string(i) + " out of range for shape " +
                         shape_to_string(shape()));
    }
    return shape()[static_cast<std::size_t>(i)];
}

std::size_t Tensor::numel() const { return node_->value.size(); }

const std::vector<double>& Tensor::values() const { return node_->value; }

std::vector<double>& Tensor::mutable_values() {
    if (!node_->parents.empty()) {
        throw std::logic_error("mutable_values: tensor is not a leaf");
    }
    return node_->value;
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item: expected a scalar, got shape " + shape_to_string(shape()));
    }
    return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
    if (!node_->parents.empty()) {
        throw std::logic_error("set_requires_grad: tensor is not a leaf");
    }
    node_->requires_grad = on;
}

const std::vector<double>* Tensor::grad() const {
    if (!node_ || node_->grad.empty()) return nullptr;
    return &node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

// ---------------------------------------------------------------------------
// broadcasting
// ---------------------------------------------------------------------------

namespace {

// Shapes broadcast when, after right-padding the shorter one with singleton
// extents, every pair of dims is equal or one of them is 1. This is what a
// [C] vector against a [C,H,W] map needs: [C] pads to [C,1,1].
struct BcastPlan {
    bool same = false;
    Shape out;
    std::vector<std::size_t> sa, sb;  // per-dim strides; 0 on broadcast dims
};

BcastPlan make_bcast(const char* op, const Shape& a, const Shape& b) {
    BcastPlan plan;
    if (a == b) {
        plan.same = true;
        plan.out = a;
        return plan;
    }
    const std::size_t nd = std::max(a.size(), b.size());
    Shape pa = a, pb = b;
    pa.resize(nd, 1);
    pb.resize(nd, 1);
    plan.out.resize(nd);
    for (std::size_t i = 0; i < nd; ++i) {
        if (pa[i] == pb[i]) {
            plan.out[i] = pa[i];
        } else if (pa[i] == 1) {
            plan.out[i] = pb[i];
        } else if (pb[i] == 1) {
            plan.out[i] = pa[i];
        } else {
            throw ShapeError(std::string(op) + ": shapes " + shape_to_string(a) + " and " +
                             shape_to_string(b) + " are not broadcast-compatible");
        }
    }
    auto strides = [nd](const Shape& s) {
        std::vector<std::size_t> st(nd);
        std::size_t acc = 1;
        for (std::size_t i = nd; i-- > 0;) {
            st[i] = acc;
            acc *= static_cast<std::size_t>(s[i]);
        }
        return st;
    };
    plan.sa = strides(pa);
    plan.sb = strides(pb);
    for (std::size_t i = 0; i < nd; ++i) {
        if (pa[i] == 1 && plan.out[i] != 1) plan.sa[i] = 0;
        if (pb[i] == 1 && plan.out[i] != 1) plan.sb[i] = 0;
    }
    return plan;
}

// Visits every output position with the flat output index and the two input
// offsets, odometer style.
template <class F>
void for_each_bcast(const BcastPlan& p, F&& f) {
    const std::size_t total = shape_numel(p.out);
    const int nd = static_cast<int>(p.out.size());
    std::vector<int> idx(static_cast<std::size_t>(nd), 0);
    std::size_t oa = 0, ob = 0;
    for (std::size_t lin = 0; lin < total; ++lin) {
        f(lin, oa, ob);
        for (int d = nd - 1; d >= 0; --d) {
            const auto ud = static_cast<std::size_t>(d);
            if (++idx[ud] < p.out[ud]) {
                oa += p.sa[ud];
                ob += p.sb[ud];
                break;
            }
            idx[ud] = 0;
            oa -= p.sa[ud] * static_cast<std::size_t>(p.out[ud] - 1);
            ob -= p.sb[ud] * static_cast<std::size_t>(p.out[ud] - 1);
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// arithmetic
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    const BcastPlan plan = make_bcast("add", a.shape(), b.shape());
    std::vector<double> out(shape_numel(plan.out));
    if (plan.same) {
        K().add(out.data(), a.values().data(), b.values().data(), out.size());
    } else {
        const auto& av = a.values();
        const auto& bv = b.values();
        for_each_bcast(plan, [&](std::size_t lin, std::size_t oa, std::size_t ob) {
            out[lin] = av[oa] + bv[ob];
        });
    }
    auto n = make_node(plan.out, std::move(out));
    if (track({&a, &b})) {
        attach(n, {&a, &b}, [a, b, plan](Node& self) {
            Node* pa = a.node().get();
            Node* pb = b.node().get();
            const auto& g = self.grad;
            if (plan.same) {
                if (pa->requires_grad) K().acc(pa->ensure_grad().data(), g.data(), g.size());
                if (pb->requires_grad) K().acc(pb->ensure_grad().data(), g.data(), g.size());
                return;
            }
            double* ga = pa->requires_grad ? pa->ensure_grad().data() : nullptr;
            double* gb = pb->requires_grad ? pb->ensure_grad().data() : nullptr;
            for_each_bcast(plan, [&](std::size_t lin, std::size_t oa, std::size_t ob) {
                if (ga) ga[oa] += g[lin];
                if (gb) gb[ob] += g[lin];
            });
        });
    }
    return Tensor(std::move(n));
}

Tensor sub(const Tensor& a, const Tensor& b) {
    const BcastPlan plan = make_bcast("sub", a.shape(), b.shape());
    std::vector<double> out(shape_numel(plan.out));
    if (plan.same) {
        K().sub(out.data(), a.values().data(), b.values().data(), out.size());
    } else {
        const auto& av = a.values();
        const auto& bv = b.values();
        for_each_bcast(plan, [&](std::size_t lin, std::size_t oa, std::size_t ob) {
            out[lin] = av[oa] - bv[ob];
        });
    }
    auto n = make_node(plan.out, std::move(out));
    if (track({&a, &b})) {
        attach(n, {&a, &b}, [a, b, plan](Node& self) {
            Node* pa = a.node().get();
            Node* pb = b.node().get();
            const auto& g = self.grad;
            if (plan.same) {
                if (pa->requires_grad) K().acc(pa->ensure_grad().data(), g.data(), g.size());
                if (pb->requires_grad) K().axpy(pb->ensure_grad().data(), g.data(), -1.0, g.size());
                return;
            }
            double* ga = pa->requires_grad ? pa->ensure_grad().data() : nullptr;
            double* gb = pb->requires_grad ? pb->ensure_grad().data() : nullptr;
            for_each_bcast(plan, [&](std::size_t lin, std::size_t oa, std::size_t ob) {
                if (ga) ga[oa] += g[lin];
                if (gb) gb[ob] -= g[lin];
            });
        });
    }
    return Tensor(std::move(n));
}

Tensor mul(const Tensor& a, const Tensor& b) {
    const BcastPlan plan = make_bcast("mul", a.shape(), b.shape());
    std::vector<double> out(shape_numel(plan.out));
    if (plan.same) {
        K().mul(out.data(), a.values().data(), b.values().data(), out.size());
    } else {
        const auto& av = a.values();
        const auto& bv = b.values();
        for_each_bcast(plan, [&](std::size_t lin, std::size_t oa, std::size_t ob) {
            out[lin] = av[oa] * bv[ob];
        });
    }
    auto n = make_node(plan.out, std::move(out));
    if (track({&a, &b})) {
        attach(n, {&a, &b}, [a, b, plan](Node& self) {
            Node* pa = a.node().get();
            Node* pb = b.node().get();
            const auto& g = self.grad;
            const auto& av = pa->value;
            const auto& bv = pb->value;
            if (plan.same) {
                if (pa->requires_grad) K().mul_acc(pa->ensure_grad().data(), g.data(), bv.data(), g.size());
                if (pb->requires_grad) K().mul_acc(pb->ensure_grad().data(), g.data(), av.data(), g.size());
                return;
            }
            double* ga = pa->requires_grad ? pa->ensure_grad().data() : nullptr;
            double* gb = pb->requires_grad ? pb->ensure_grad().data() : nullptr;
            for_each_bcast(plan, [&](std::size_t lin, std::size_t oa, std::size_t ob) {
                if (ga) ga[oa] += g[lin] * bv[ob];
                if (gb) gb[ob] += g[lin] * av[oa];
            });
        });
    }
    return Tensor(std::move(n));
}

Tensor scalar_mul(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    K().scale(out.data(), a.values().data(), s, out.size());
    auto n = make_node(a.shape(), std::move(out));
    if (track({&a})) {
        attach(n, {&a}, [a, s](Node& self) {
            K().axpy(a.node()->ensure_grad().data(), self.grad.data(), s, self.grad.size());
        });
    }
    return Tensor(std::move(n));
}

Tensor scalar_add(const Tensor& a, double s) {
    std::vector<double> out(a.values());
    K().add_scalar_acc(out.data(), s, out.size());
    auto n = make_node(a.shape(), std::move(out));
    if (track({&a})) {
        attach(n, {&a}, [a](Node& self) {
            K().acc(a.node()->ensure_grad().data(), self.grad.data(), self.grad.size());
        });
    }
    return Tensor(std::move(n));
}

namespace {
void transpose_buf(const double* src, double* dst, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
    }
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2) {
        throw ShapeError("matmul: expected 2-d operands, got " + shape_to_string(a.shape()) +
                         " and " + shape_to_string(b.shape()));
    }
    if (a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: inner extents differ, " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
    }
    const auto m = static_cast<std::size_t>(a.dim(0));
    const auto k = static_cast<std::size_t>(a.dim(1));
    const auto nn = static_cast<std::size_t>(b.dim(1));
    std::vector<double> out(m * nn);
    K().matmul_set(out.data(), a.values().data(), b.values().data(), m, k, nn);
    auto n = make_node({a.dim(0), b.dim(1)}, std::move(out));
    if (track({&a, &b})) {
        attach(n, {&a, &b}, [a, b, m, k, nn](Node& self) {
            Node* pa = a.node().get();
            Node* pb = b.node().get();
            const auto& g = self.grad;
            if (pa->requires_grad) {
                // da += g . b^T
                std::vector<double> bt(k * nn);
                transpose_buf(pb->value.data(), bt.data(), k, nn);
                K().matmul_acc(pa->ensure_grad().data(), g.data(), bt.data(), m, nn, k);
            }
            if (pb->requires_grad) {
                // db += a^T . g
                std::vector<double> at(m * k);
                transpose_buf(pa->value.data(), at.data(), m, k);
                K().matmul_acc(pb->ensure_grad().data(), at.data(), g.data(), k, m, nn);
            }
        });
    }
    return Tensor(std::move(n));
}

// ---------------------------------------------------------------------------
// elementwise maps
// ---------------------------------------------------------------------------

Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.numel());
    const auto& xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = xv[i];
        if (v >= 0.0) {
            out[i] = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            out[i] = e / (1.0 + e);
        }
    }
    auto n = make_node(x.shape(), std::move(out));
    if (track({&x})) {
        attach(n, {&x}, [x](Node& self) {
            auto& ga = x.node()->ensure_grad();
            const double sign = testing::faults().flip_sigmoid_adjoint ? -1.0 : 1.0;
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double s = self.value[i];
                ga[i] += sign * self.grad[i] * s * (1.0 - s);
            }
        });
    }
    return Tensor(std::move(n));
}

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.numel());
    K().relu(out.data(), x.values().data(), out.size());
    auto n = make_node(x.shape(), std::move(out));
    if (track({&x})) {
        attach(n, {&x}, [x](Node& self) {
            K().relu_mask_acc(x.node()->ensure_grad().data(), self.grad.data(),
                              x.node()->value.data(), self.grad.size());
        });
    }
    return Tensor(std::move(n));
}

Tensor exp(const Tensor& x) {
    std::vector<double> out(x.numel());
    const auto& xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(xv[i]);
    auto n = make_node(x.shape(), std::move(out));
    if (track({&x})) {
        attach(n, {&x}, [x](Node& self) {
            K().mul_acc(x.node()->ensure_grad().data(), self.grad.data(), self.value.data(),
                        self.grad.size());
        });
    }
    return Tensor(std::move(n));
}

Tensor log(const Tensor& x) {
    std::vector<double> out(x.numel());
    const auto& xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(xv[i] > 0.0)) {
            throw DomainError("log: non-positive input " + std::to_string(xv[i]) +
                              " at flat index " + std::to_string(i));
        }
        out[i] = std::log(xv[i]);
    }
    auto n = make_node(x.shape(), std::move(out));
    if (track({&x})) {
        attach(n, {&x}, [x](Node& self) {
            auto& ga = x.node()->ensure_grad();
            const auto& xv = x.node()->value;
            for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] / xv[i];
        });
    }
    return Tensor(std::move(n));
}

Tensor abs(const Tensor& x) {
    std::vector<double> out(x.numel());
    const auto& xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(xv[i]);
    auto n = make_node(x.shape(), std::move(out));
    if (track({&x})) {
        attach(n, {&x}, [x](Node& self) {
            auto& ga = x.node()->ensure_grad();
            const auto& xv = x.node()->value;
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                if (xv[i] > 0.0) {
                    ga[i] += self.grad[i];
                } else if (xv[i] < 0.0) {
                    ga[i] -= self.grad[i];
                }
            }
        });
    }
    return Tensor(std::move(n));
}

Tensor clamp_min(const Tensor& x, double lo) {
    std::vector<double> out(x.numel());
    const auto& xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > lo ? xv[i] : lo;
    auto n = make_node(x.shape(), std::move(out));
    if (track({&x})) {
        attach(n, {&x}, [x, lo](Node& self) {
            auto& ga = x.node()->ensure_grad();
            const auto& xv = x.node()->value;
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                if (xv[i] > lo) ga[i] += self.grad[i];
            }
        });
    }
    return Tensor(std::move(n));
}

// ---------------------------------------------------------------------------
// softmax family
// ---------------------------------------------------------------------------

namespace {

struct AxisDecomp {
    std::size_t outer, k, inner;
};

AxisDecomp decomp(const Shape& s, int axis, const char* op) {
    if (axis < 0 || axis >= static_cast<int>(s.size())) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_to_string(s));
    }
    AxisDecomp d{1, static_cast<std::size_t>(s[static_cast<std::size_t>(axis)]), 1};
    for (int i = 0; i < axis; ++i) d.outer *= static_cast<std::size_t>(s[static_cast<std::size_t>(i)]);
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) {
        d.inner *= static_cast<std::size_t>(s[i]);
    }
    return d;
}

void softmax_values(const std::vector<double>& x, std::vector<double>& y, AxisDecomp d) {
    for (std::size_t o = 0; o < d.outer; ++o) {
        for (std::size_t i = 0; i < d.inner; ++i) {
            const std::size_t base = o * d.k * d.inner + i;
            double m = x[base];
            for (std::size_t j = 1; j < d.k; ++j) m = std::max(m, x[base + j * d.inner]);
            double s = 0.0;
            for (std::size_t j = 0; j < d.k; ++j) {
                const double e = std::exp(x[base + j * d.inner] - m);
                y[base + j * d.inner] = e;
                s += e;
            }
            const double inv = 1.0 / s;
            for (std::size_t j = 0; j < d.k; ++j) y[base + j * d.inner] *= inv;
        }
    }
}

Tensor softmax_impl(const Tensor& x, AxisDecomp d) {
    std::vector<double> out(x.numel());
    softmax_values(x.values(), out, d);
    auto n = make_node(x.shape(), std::move(out));
    if (track({&x})) {
        attach(n, {&x}, [x, d](Node& self) {
            auto& ga = x.node()->ensure_grad();
            const auto& g = self.grad;
            const auto& y = self.value;
            for (std::size_t o = 0; o < d.outer; ++o) {
                for (std::size_t i = 0; i < d.inner; ++i) {
                    const std::size_t base = o * d.k * d.inner + i;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < d.k; ++j) {
                        const std::size_t p = base + j * d.inner;
                        dot += g[p] * y[p];
                    }
                    for (std::size_t j = 0; j < d.k; ++j) {
                        const std::size_t p = base + j * d.inner;
                        ga[p] += y[p] * (g[p] - dot);
                    }
                }
            }
        });
    }
    return Tensor(std::move(n));
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
    return softmax_impl(x, decomp(x.shape(), axis, "softmax"));
}

Tensor softmax_spatial(const Tensor& x) {
    if (x.ndim() != 3) {
        throw ShapeError("softmax_spatial: expected [C,H,W], got " + shape_to_string(x.shape()));
    }
    const AxisDecomp d{static_cast<std::size_t>(x.dim(0)),
                       static_cast<std::size_t>(x.dim(1)) * static_cast<std::size_t>(x.dim(2)), 1};
    return softmax_impl(x, d);
}

Tensor log_softmax(const Tensor& x, int axis) {
    const AxisDecomp d = decomp(x.shape(), axis, "log_softmax");
    std::vector<double> out(x.numel());
    const auto& xv = x.values();
    for (std::size_t o = 0; o < d.outer; ++o) {
        for (std::size_t i = 0; i < d.inner; ++i) {
            const std::size_t base = o * d.k * d.inner + i;
            double m = xv[base];
            for (std::size_t j = 1; j < d.k; ++j) m = std::max(m, xv[base + j * d.inner]);
            double s = 0.0;
            for (std::size_t j = 0; j < d.k; ++j) s += std::exp(xv[base + j * d.inner] - m);
            const double lse = m + std::log(s);
            for (std::size_t j = 0; j < d.k; ++j) {
                out[base + j * d.inner] = xv[base + j * d.inner] - lse;
            }
        }
    }
    auto n = make_node(x.shape(), std::move(out));
    if (track({&x})) {
        attach(n, {&x}, [x, d](Node& self) {
            auto& ga = x.node()->ensure_grad();
            const auto& g = self.grad;
            const auto& y = self.value;
            for (std::size_t o = 0; o < d.outer; ++o) {
                for (std::size_t i = 0; i < d.inner; ++i) {
                    const std::size_t base = o * d.k * d.inner + i;
                    double gs = 0.0;
                    for (std::size_t j = 0; j < d.k; ++j) gs += g[base + j * d.inner];
                    for (std::size_t j = 0; j < d.k; ++j) {
                        const std::size_t p = base + j * d.inner;
                        ga[p] += g[p] - std::exp(y[p]) * gs;
                    }
                }
            }
        });
    }
    return Tensor(std::move(n));
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
    auto n = make_node({1}, {K().sum(x.values().data(), x.numel())});
    if (track({&x})) {
        attach(n, {&x}, [x](Node& self) {
            auto& ga = x.node()->ensure_grad();
            K().add_scalar_acc(ga.data(), self.grad[0], ga.size());
        });
    }
    return Tensor(std::move(n));
}

Tensor mean(const Tensor& x) {
    const double inv = 1.0 / static_cast<double>(x.numel());
    auto n = make_node({1}, {K().sum(x.values().data(), x.numel()) * inv});
    if (track({&x})) {
        attach(n, {&x}, [x, inv](Node& self) {
            auto& ga = x.node()->ensure_grad();
            K().add_scalar_acc(ga.data(), self.grad[0] * inv, ga.size());
        });
    }
    return Tensor(std::move(n));
}

namespace {
void require_chw(const Tensor& x, const char* op) {
    if (x.ndim() != 3) {
        throw ShapeError(std::string(op) + ": expected [C,H,W], got " + shape_to_string(x.shape()));
    }
}
}  // namespace

Tensor global_avg_pool(const Tensor& x) {
    require_chw(x, "global_avg_pool");
    const auto c = static_cast<std::size_t>(x.dim(0));
    const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * static_cast<std::size_t>(x.dim(2));
    const double inv = 1.0 / static_cast<double>(hw);
    std::vector<double> out(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        out[ch] = K().sum(x.values().data() + ch * hw, hw) * inv;
    }
    auto n = make_node({x.dim(0)}, std::move(out));
    if (track({&x})) {
        attach(n, {&x}, [x, c, hw, inv](Node& self) {
            auto& ga = x.node()->ensure_grad();
            for (std::size_t ch = 0; ch < c; ++ch) {
                K().add_scalar_acc(ga.data() + ch * hw, self.grad[ch] * inv, hw);
            }
        });
    }
    return Tensor(std::move(n));
}

Tensor global_max_pool(const Tensor& x) {
    require_chw(x, "global_max_pool");
    const auto c = static_cast<std::size_t>(x.dim(0));
    const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * static_cast<std::size_t>(x.dim(2));
    std::vector<double> out(c);
    std::vector<std::size_t> arg(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        arg[ch] = K().argmax(x.values().data() + ch * hw, hw);
        out[ch] = x.values()[ch * hw + arg[ch]];
    }
    auto n = make_node({x.dim(0)}, std::move(out));
    if (track({&x})) {
        attach(n, {&x}, [x, c, hw, arg](Node& self) {
            auto& ga = x.node()->ensure_grad();
            for (std::size_t ch = 0; ch < c; ++ch) ga[ch * hw + arg[ch]] += self.grad[ch];
        });
    }
    return Tensor(std::move(n));
}

// ---------------------------------------------------------------------------
// structure
// ---------------------------------------------------------------------------

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require_chw(a, "concat_channels");
    require_chw(b, "concat_channels");
    if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
        throw ShapeError("concat_channels: spatial extents differ, " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
    }
    std::vector<double> out(a.numel() + b.numel());
    std::copy(a.values().begin(), a.values().end(), out.begin());
    std::copy(b.values().begin(), b.values().end(),
              out.begin() + static_cast<std::ptrdiff_t>(a.numel()));
    auto n = make_node({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)}, std::move(out));
    if (track({&a, &b})) {
        const std::size_t na = a.numel();
        attach(n, {&a, &b}, [a, b, na](Node& self) {
            Node* pa = a.node().get();
            Node* pb = b.node().get();
            if (pa->requires_grad) K().acc(pa->ensure_grad().data(), self.grad.data(), na);
            if (pb->requires_grad) {
                K().acc(pb->ensure_grad().data(), self.grad.data() + na, self.grad.size() - na);
            }
        });
    }
    return Tensor(std::move(n));
}

Tensor slice_channels(const Tensor& x, int c_begin, int c_end) {
    require_chw(x, "slice_channels");
    if (c_begin < 0 || c_end > x.dim(0) || c_begin >= c_end) {
        throw ShapeError("slice_channels: range [" + std::to_string(c_begin) + "," +
                         std::to_string(c_end) + ") invalid for shape " + shape_to_string(x.shape()));
    }
    const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * static_cast<std::size_t>(x.dim(2));
    const std::size_t off = static_cast<std::size_t>(c_begin) * hw;
    const std::size_t len = static_cast<std::size_t>(c_end - c_begin) * hw;
    std::vector<double> out(x.values().begin() + static_cast<std::ptrdiff_t>(off),
                            x.values().begin() + static_cast<std::ptrdiff_t>(off + len));
    auto n = make_node({c_end - c_begin, x.dim(1), x.dim(2)}, std::move(out));
    if (track({&x})) {
        attach(n, {&x}, [x, off](Node& self) {
            K().acc(x.node()->ensure_grad().data() + off, self.grad.data(), self.grad.size());
        });
    }
    return Tensor(std::move(n));
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                         shape_to_string(shape));
    }
    auto n = make_node(std::move(shape), x.values());
    if (track({&x})) {
        attach(n, {&x}, [x](Node& self) {
            K().acc(x.node()->ensure_grad().data(), self.grad.data(), self.grad.size());
        });
    }
    return Tensor(std::move(n));
}

Tensor transpose(const Tensor& x) {
    if (x.ndim() != 2) {
        throw ShapeError("transpose: expected 2-d, got " + shape_to_string(x.shape()));
    }
    const auto rows = static_cast<std::size_t>(x.dim(0));
    const auto cols = static_cast<std::size_t>(x.dim(1));
    std::vector<double> out(x.numel());
    transpose_buf(x.values().data(), out.data(), rows, cols);
    auto n = make_node({x.dim(1), x.dim(0)}, std::move(out));
    if (track({&x})) {
        attach(n, {&x}, [x, rows, cols](Node& self) {
            auto& ga = x.node()->ensure_grad();
            // self is [cols, rows]; transpose the gradient back
            for (std::size_t r = 0; r < cols; ++r) {
                for (std::size_t c = 0; c < rows; ++c) ga[c * cols + r] += self.grad[r * rows + c];
            }
        });
    }
    return Tensor(std::move(n));
}

Tensor upsample_nearest2(const Tensor& x) {
    require_chw(x, "upsample_nearest2");
    const auto c = static_cast<std::size_t>(x.dim(0));
    const auto h = static_cast<std::size_t>(x.dim(1));
    const auto w = static_cast<std::size_t>(x.dim(2));
    std::vector<double> out(c * 4 * h * w);
    const auto& xv = x.values();
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < 2 * h; ++y) {
            const double* srow = xv.data() + (ch * h + y / 2) * w;
            double* drow = out.data() + (ch * 2 * h + y) * 2 * w;
            for (std::size_t xx = 0; xx < 2 * w; ++xx) drow[xx] = srow[xx / 2];
        }
    }
    auto n = make_node({x.dim(0), 2 * x.dim(1), 2 * x.dim(2)}, std::move(out));
    if (track({&x})) {
        attach(n, {&x}, [x, c, h, w](Node& self) {
            auto& ga = x.node()->ensure_grad();
            for (std::size_t ch = 0; ch < c; ++ch) {
                for (std::size_t y = 0; y < 2 * h; ++y) {
                    const double* grow = self.grad.data() + (ch * 2 * h + y) * 2 * w;
                    double* drow = ga.data() + (ch * h + y / 2) * w;
                    for (std::size_t xx = 0; xx < 2 * w; ++xx) drow[xx / 2] += grow[xx];
                }
            }
        });
    }
    return Tensor(std::move(n));
}

namespace detail {

void im2col_gather(const double* x, int c, int h, int w, int stride, int ho, int wo,
                   double* cols) {
    const std::size_t hwo = static_cast<std::size_t>(ho) * wo;
    for (int ch = 0; ch < c; ++ch) {
        const double* plane = x + static_cast<std::size_t>(ch) * h * w;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                double* row = cols + static_cast<std::size_t>((ch * 3 + ky) * 3 + kx) * hwo;
                // valid output columns: 0 <= ox*stride - 1 + kx < w
                const int lo = std::max(0, (1 - kx + stride - 1) / stride);
                const int hi = std::min(wo, (w - kx + stride) / stride);
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - 1 + ky;
                    double* dst = row + static_cast<std::size_t>(oy) * wo;
                    if (iy < 0 || iy >= h) {
                        std::fill_n(dst, wo, 0.0);
                        continue;
                    }
                    const double* src = plane + static_cast<std::size_t>(iy) * w;
                    std::fill_n(dst, lo, 0.0);
                    if (stride == 1) {
                        std::copy_n(src + lo + kx - 1, hi - lo, dst + lo);
                    } else {
                        for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * stride - 1 + kx];
                    }
                    std::fill_n(dst + hi, wo - hi, 0.0);
                }
            }
        }
    }
}

void col2im_scatter_acc(const double* cols, int c, int h, int w, int stride, int ho, int wo,
                        double* gx) {
    const std::size_t hwo = static_cast<std::size_t>(ho) * wo;
    const auto& K = kernels::active();
    for (int ch = 0; ch < c; ++ch) {
        double* plane = gx + static_cast<std::size_t>(ch) * h * w;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const double* row = cols + static_cast<std::size_t>((ch * 3 + ky) * 3 + kx) * hwo;
                const int lo = std::max(0, (1 - kx + stride - 1) / stride);
                const int hi = std::min(wo, (w - kx + stride) / stride);
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - 1 + ky;
                    if (iy < 0 || iy >= h) continue;
                    double* dst = plane + static_cast<std::size_t>(iy) * w;
                    const double* src = row + static_cast<std::size_t>(oy) * wo;
                    if (stride == 1) {
                        if (hi > lo) K.acc(dst + lo + kx - 1, src + lo, static_cast<std::size_t>(hi - lo));
                    } else {
                        for (int ox = lo; ox < hi; ++ox) dst[ox * stride - 1 + kx] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

Tensor im2col3x3(const Tensor& x, int stride) {
    require_chw(x, "im2col3x3");
    if (stride != 1 && stride != 2) {
        throw ShapeError("im2col3x3: stride must be 1 or 2, got " + std::to_string(stride));
    }
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int ho = (h + 2 - 3) / stride + 1;
    const int wo = (w + 2 - 3) / stride + 1;
    std::vector<double> out(static_cast<std::size_t>(c) * 9 * ho * wo);
    detail::im2col_gather(x.values().data(), c, h, w, stride, ho, wo, out.data());
    auto n = make_node({c * 9, ho * wo}, std::move(out));
    if (track({&x})) {
        attach(n, {&x}, [x, stride, c, h, w, ho, wo](Node& self) {
            detail::col2im_scatter_acc(self.grad.data(), c, h, w, stride, ho, wo,
                                       x.node()->ensure_grad().data());
        });
    }
    return Tensor(std::move(n));
}

Tensor select_class(const Tensor& x, const std::vector<int>& labels) {
    require_chw(x, "select_class");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    if (labels.size() != hw) {
        throw ShapeError("select_class: label count " + std::to_string(labels.size()) +
                         " does not match " + std::to_string(hw) + " pixels");
    }
    std::vector<double> out(hw);
    const auto& xv = x.values();
    for (std::size_t p = 0; p < hw; ++p) {
        const int lab = labels[p];
        if (lab < 0 || lab >= c) {
            throw DomainError("select_class: label " + std::to_string(lab) + " out of range [0," +
                              std::to_string(c) + ") at pixel (" + std::to_string(p / w) + "," +
                              std::to_string(p % w) + ")");
        }
        out[p] = xv[static_cast<std::size_t>(lab) * hw + p];
    }
    auto n = make_node({h, w}, std::move(out));
    if (track({&x})) {
        attach(n, {&x}, [x, labels, hw](Node& self) {
            auto& ga = x.node()->ensure_grad();
            for (std::size_t p = 0; p < hw; ++p) {
                ga[static_cast<std::size_t>(labels[p]) * hw + p] += self.grad[p];
            }
        });
    }
    return Tensor(std::move(n));
}

Tensor stop_gradient(const Tensor& x) {
    return Tensor(make_node(x.shape(), std::vector<double>(x.values())));
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
    if (!loss.defined()) throw std::logic_error("backward: undefined tensor");
    if (loss.numel() != 1) {
        throw ShapeError("backward: loss must be a scalar, got shape " +
                         shape_to_string(loss.shape()));
    }
    Node* root = loss.node().get();
    if (!root->requires_grad) return;

    // Reverse DFS post-order over requires_grad parents is a topological
    // order with every node after all of its graph children, so each node's
    // grad is complete before its backward_fn runs. Visits each node once.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    // Interior grads are per-sweep scratch; leaf grads accumulate across
    // sweeps until explicitly zeroed.
    for (Node* n : order) {
        if (n->backward_fn) n->grad.clear();
    }
    root->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->backward_fn) continue;
        n->ensure_grad();
        n->backward_fn(*n);
    }
}

}  // namespace rtfd
