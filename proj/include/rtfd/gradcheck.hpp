#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rtfd/tensor.hpp"

namespace rtfd {

// Central finite-difference oracle for reverse-mode gradients. The oracle
// only ever evaluates forward passes, so it is independent of every adjoint
// it checks.

struct GradCheckResult {
    bool ok = true;
    double max_rel_err = 0.0;
    std::string detail;  // first failure, if any
};

struct GradCheckOptions {
    double step = 1e-5;
    double rel_tol = 1e-6;
    // Differences below this are treated as matching regardless of the
    // relative error (covers exactly-zero gradients against FD roundoff).
    double abs_tol = 1e-9;
};

/// Compares backward() gradients of `build_loss()` against central finite
/// differences for every element of every listed leaf. `build_loss` must
/// construct a fresh graph from the leaves' current values on each call.
GradCheckResult check_gradients(const std::function<Tensor()>& build_loss,
                                const std::vector<Tensor>& leaves,
                                const GradCheckOptions& opts = {});

/// Finite-difference derivative of build_loss w.r.t. one leaf element.
double fd_derivative(const std::function<Tensor()>& build_loss, Tensor& leaf, std::size_t index,
                     double step);

}  // namespace rtfd
