#include "rtfd/cmdr.hpp"

namespace rtfd {

std::vector<double> sign_consistency_gate(const ChannelDescriptor& f,
                                          const ChannelDescriptor& x) {
    if (f.channels() != x.channels()) {
        throw ShapeError("sign_consistency_gate: descriptor lengths differ, " +
                         std::to_string(f.channels()) + " vs " + std::to_string(x.channels()));
    }
    const auto& fv = f.values.values();
    const auto& xv = x.values.values();
    std::vector<double> gate(fv.size());
    for (std::size_t i = 0; i < gate.size(); ++i) gate[i] = fv[i] * xv[i] > 0.0 ? 1.0 : 0.0;
    return gate;
}

StageTargets decouple(const Tensor& f_fuse, const ChannelDescriptor& f, const ChannelDescriptor& r,
                      const ChannelDescriptor& t) {
    if (f_fuse.ndim() != 3 || f.channels() != f_fuse.dim(0)) {
        throw ShapeError("decouple: fused feature " + shape_to_string(f_fuse.shape()) +
                         " does not match descriptor length " + std::to_string(f.channels()));
    }
    Tensor gate_rgb({f.channels()}, sign_consistency_gate(f, r));
    Tensor gate_t({f.channels()}, sign_consistency_gate(f, t));
    return StageTargets{stop_gradient(mul(gate_rgb, f_fuse)), stop_gradient(mul(gate_t, f_fuse))};
}

Tensor cmdr_loss(const DecoupledTargets& targets, const std::vector<Tensor>& rgb_stages,
                 const std::vector<Tensor>& t_stages) {
    if (targets.stages.size() != rgb_stages.size() || targets.stages.size() != t_stages.size()) {
        throw ShapeError("cmdr_loss: stage counts differ (" +
                         std::to_string(targets.stages.size()) + " targets, " +
                         std::to_string(rgb_stages.size()) + " rgb, " +
                         std::to_string(t_stages.size()) + " thermal)");
    }
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t i = 0; i < targets.stages.size(); ++i) {
        const StageTargets& st = targets.stages[i];
        if (st.rgb.shape() != rgb_stages[i].shape() || st.t.shape() != t_stages[i].shape()) {
            throw ShapeError("cmdr_loss: stage " + std::to_string(i) + " shape mismatch, target " +
                             shape_to_string(st.rgb.shape()) + " vs feature " +
                             shape_to_string(rgb_stages[i].shape()));
        }
        Tensor d_rgb = sub(st.rgb, rgb_stages[i]);
        Tensor d_t = sub(st.t, t_stages[i]);
        total = add(total, add(mean(mul(d_rgb, d_rgb)), mean(mul(d_t, d_t))));
    }
    return total;
}

}  // namespace rtfd
