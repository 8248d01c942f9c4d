#include "rtfd/losses.hpp"

#include "rtfd/rdr.hpp"

namespace rtfd {

Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& labels) {
    return scalar_mul(mean(select_class(log_softmax(logits, 0), labels)), -1.0);
}

Tensor cross_entropy_probs(const Tensor& probs, const std::vector<int>& labels) {
    return scalar_mul(mean(log(clamp_min(select_class(probs, labels), 1e-12))), -1.0);
}

DecoupledTargets make_decoupled_targets(const BranchOutputs& out,
                                        const std::vector<FusionScaleParams>& fusion) {
    DecoupledTargets targets;
    for (std::size_t i = 0; i < out.dec_fuse.size(); ++i) {
        // decoder stage i shares width and resolution with fusion scale E-2-i
        const int scale = static_cast<int>(fusion.size()) - 2 - static_cast<int>(i);
        const FusionScaleParams& fp = fusion[static_cast<std::size_t>(scale)];
        ChannelDescriptor f = descriptor_of(out.dec_fuse[i], DescriptorSource::Fused, fp);
        targets.stages.push_back(decouple(out.dec_fuse[i], f, out.desc_r[static_cast<std::size_t>(scale)],
                                          out.desc_t[static_cast<std::size_t>(scale)]));
    }
    return targets;
}

TotalLoss total_loss(const BranchOutputs& out, const std::vector<int>& labels,
                     const LossWeights& w, const std::vector<FusionScaleParams>& fusion) {
    TotalLoss result;
    Tensor total = Tensor::scalar(0.0);
    if (w.lambda_ce != 0.0) {
        Tensor ce_fuse = cross_entropy_logits(out.logits_fuse, labels);
        Tensor ce_rgb = cross_entropy_logits(out.logits_rgb, labels);
        Tensor ce_t = cross_entropy_logits(out.logits_t, labels);
        result.breakdown.ce_fuse = ce_fuse.item();
        result.breakdown.ce_rgb = ce_rgb.item();
        result.breakdown.ce_t = ce_t.item();
        total = add(total, scalar_mul(add(add(ce_fuse, ce_rgb), ce_t), w.lambda_ce));
    }
    if (w.lambda_cmdr != 0.0) {
        Tensor l_cmdr = cmdr_loss(make_decoupled_targets(out, fusion), out.dec_rgb, out.dec_t);
        result.breakdown.cmdr = l_cmdr.item();
        total = add(total, scalar_mul(l_cmdr, w.lambda_cmdr));
    }
    if (w.lambda_rdr != 0.0) {
        Tensor l_rdr = rdr_loss(out.p_fuse, out.p_rgb, out.p_t);
        result.breakdown.rdr = l_rdr.item();
        total = add(total, scalar_mul(l_rdr, w.lambda_rdr));
    }
    result.breakdown.total = total.item();
    result.value = std::move(total);
    return result;
}

}  // namespace rtfd
