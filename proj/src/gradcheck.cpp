#include "rtfd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rtfd {

double fd_derivative(const std::function<Tensor()>& build_loss, Tensor& leaf, std::size_t index,
                     double step) {
    auto& v = leaf.mutable_values();
    const double saved = v[index];
    v[index] = saved + step;
    const double up = build_loss().item();
    v[index] = saved - step;
    const double down = build_loss().item();
    v[index] = saved;
    return (up - down) / (2.0 * step);
}

GradCheckResult check_gradients(const std::function<Tensor()>& build_loss,
                                const std::vector<Tensor>& leaves, const GradCheckOptions& opts) {
    GradCheckResult res;
    for (const Tensor& leaf : leaves) {
        const_cast<Tensor&>(leaf).zero_grad();
    }
    Tensor loss = build_loss();
    backward(loss);

    for (std::size_t li = 0; li < leaves.size(); ++li) {
        Tensor leaf = leaves[li];
        const std::vector<double>* g = leaf.grad();
        for (std::size_t i = 0; i < leaf.numel(); ++i) {
            const double analytic = g ? (*g)[i] : 0.0;
            const double numeric = fd_derivative(build_loss, leaf, i, opts.step);
            const double diff = std::fabs(analytic - numeric);
            if (diff <= opts.abs_tol) continue;
            const double rel = diff / std::max(std::fabs(analytic), std::fabs(numeric));
            res.max_rel_err = std::max(res.max_rel_err, rel);
            if (rel > opts.rel_tol && res.ok) {
                res.ok = false;
                std::ostringstream os;
                os << "leaf " << li << " element " << i << ": analytic " << analytic << " vs fd "
                   << numeric << " (rel err " << rel << ")";
                res.detail = os.str();
            }
        }
    }
    return res;
}

}  // namespace rtfd
