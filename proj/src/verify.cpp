#include "rtfd/verify.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>

#include "rtfd/cmdr.hpp"
#include "rtfd/data.hpp"
#include "rtfd/gradcheck.hpp"
#include "rtfd/losses.hpp"
#include "rtfd/metrics.hpp"
#include "rtfd/model.hpp"
#include "rtfd/rdr.hpp"
#include "rtfd/rng.hpp"
#include "rtfd/train.hpp"

namespace rtfd {

namespace {

using Clock = std::chrono::steady_clock;

CheckResult finish(const std::string& name, Clock::time_point start, bool pass,
                   std::string detail) {
    CheckResult r;
    r.name = name;
    r.pass = pass;
    r.detail = std::move(detail);
    r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return r;
}

Tensor random_leaf(Rng& rng, Shape shape, double lo = -2.0, double hi = 2.0,
                   bool requires_grad = true) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

void nudge_from_zero(Tensor& t, double margin = 1e-3) {
    for (auto& v : t.mutable_values()) {
        if (std::fabs(v) < margin) v = v < 0 ? -margin : margin;
    }
}

std::vector<int> random_labels(Rng& rng, std::size_t n, int classes) {
    std::vector<int> l(n);
    for (int& v : l) v = rng.uniform_int(0, classes - 1);
    return l;
}

bool grad_all_zero(const Tensor& t) {
    const std::vector<double>* g = t.grad();
    if (!g) return true;
    for (double v : *g) {
        if (v != 0.0) return false;
    }
    return true;
}

bool grad_any_nonzero(const Tensor& t) { return !grad_all_zero(t); }

}  // namespace

// ---------------------------------------------------------------------------

CheckResult check_op_gradients() {
    const auto start = Clock::now();
    Rng rng(2024);
    std::ostringstream fail;
    int checks = 0;
    for (int trial = 0; trial < 20; ++trial) {
        Shape shape{rng.uniform_int(1, 4), rng.uniform_int(2, 6), rng.uniform_int(2, 6)};
        Tensor x = random_leaf(rng, shape);
        Tensor y = random_leaf(rng, shape);
        nudge_from_zero(x);

        const std::pair<const char*, std::function<Tensor()>> cases[] = {
            {"add", [&] { return sum(add(x, y)); }},
            {"sub", [&] { return sum(sub(x, y)); }},
            {"mul", [&] { return mean(mul(x, y)); }},
            {"scalar_mul", [&] { return sum(scalar_mul(x, 0.7)); }},
            {"sigmoid", [&] { return sum(sigmoid(x)); }},
            {"relu", [&] { return sum(relu(x)); }},
            {"exp", [&] { return sum(exp(scalar_mul(x, 0.5))); }},
            {"softmax", [&] { return sum(mul(softmax(x, 0), y)); }},
            {"softmax_spatial", [&] { return sum(mul(softmax_spatial(x), y)); }},
            {"log_softmax", [&] { return sum(mul(log_softmax(x, 0), y)); }},
            {"gap", [&] { return sum(mul(global_avg_pool(x), global_avg_pool(y))); }},
            {"gmp", [&] { return sum(global_max_pool(x)); }},
            {"concat", [&] { return sum(mul(concat_channels(x, y), concat_channels(y, x))); }},
            {"upsample", [&] { return sum(mul(upsample_nearest2(x), upsample_nearest2(y))); }},
            {"im2col_s1", [&] { return mean(mul(im2col3x3(x, 1), im2col3x3(y, 1))); }},
            {"im2col_s2", [&] { return sum(im2col3x3(x, 2)); }},
        };
        for (const auto& [name, fn] : cases) {
            const GradCheckOptions opts{1e-5, 1e-6, 1e-9};
            const GradCheckResult res = check_gradients(fn, {x, y}, opts);
            ++checks;
            if (!res.ok && fail.str().empty()) fail << name << ": " << res.detail;
        }

        Tensor pos = random_leaf(rng, {rng.uniform_int(1, 6)}, 0.2, 3.0);
        const GradCheckResult res = check_gradients([&] { return sum(log(pos)); }, {pos});
        ++checks;
        if (!res.ok && fail.str().empty()) fail << "log: " << res.detail;

        Tensor m = random_leaf(rng, {3, 4});
        Tensor n = random_leaf(rng, {4, 2});
        const GradCheckResult resm =
            check_gradients([&] { return sum(matmul(m, n)); }, {m, n});
        ++checks;
        if (!resm.ok && fail.str().empty()) fail << "matmul: " << resm.detail;
    }
    // cross-entropy on a small labelled map
    Tensor logits = random_leaf(rng, {3, 2, 2});
    const std::vector<int> labels = random_labels(rng, 4, 3);
    const GradCheckResult resce =
        check_gradients([&] { return cross_entropy_logits(logits, labels); }, {logits});
    ++checks;
    if (!resce.ok && fail.str().empty()) fail << "cross_entropy: " << resce.detail;

    const bool ok = fail.str().empty();
    return finish("gradients/per-op", start, ok,
                  ok ? std::to_string(checks) + " op checks at rel tol 1e-6" : fail.str());
}

CheckResult check_end_to_end_gradient() {
    const auto start = Clock::now();
    NetworkConfig cfg;
    cfg.num_classes = 2;
    cfg.seed = 7;
    ModelParams params = init_params(cfg);

    Rng rng(909);
    Tensor rgb = random_leaf(rng, {3, 8, 8}, 0.0, 1.0, false);
    Tensor t = random_leaf(rng, {1, 8, 8}, 0.0, 1.0, false);
    const std::vector<int> labels = random_labels(rng, 64, 2);
    const LossWeights weights;  // paper defaults

    // The regularizer targets sit under stop_gradient, so backward treats
    // them as constants by definition. The objective whose true derivative
    // backward computes is L_ALL with the targets frozen at the base point;
    // that is what the finite-difference oracle must evaluate.
    BranchOutputs base = forward_full(params, rgb, t);
    const DecoupledTargets frozen = make_decoupled_targets(base, params.fusion);
    const Tensor frozen_rdr = stop_gradient(mul(base.p_fuse, onehot_mask(base.p_fuse).m));

    auto build = [&] {
        BranchOutputs out = forward_full(params, rgb, t);
        Tensor ce = add(add(cross_entropy_logits(out.logits_fuse, labels),
                            cross_entropy_logits(out.logits_rgb, labels)),
                        cross_entropy_logits(out.logits_t, labels));
        Tensor l_cmdr = cmdr_loss(frozen, out.dec_rgb, out.dec_t);
        Tensor l_rdr = add(mean(abs(sub(frozen_rdr, out.p_rgb))),
                           mean(abs(sub(frozen_rdr, out.p_t))));
        return add(add(scalar_mul(l_cmdr, weights.lambda_cmdr),
                       scalar_mul(l_rdr, weights.lambda_rdr)),
                   scalar_mul(ce, weights.lambda_ce));
    };

    std::vector<NamedParam> all = all_parameters(params);
    for (NamedParam& np : all) np.tensor.zero_grad();
    // analytic gradients come from the real objective (live stop-gradient
    // targets); they must match the frozen-target finite differences.
    backward(total_loss(forward_full(params, rgb, t), labels, weights, params.fusion).value);

    std::ostringstream fail;
    double max_rel = 0.0;
    for (int pick = 0; pick < 10; ++pick) {
        NamedParam& np = all[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int>(all.size()) - 1))];
        const std::size_t idx =
            static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(np.tensor.numel()) - 1));
        const std::vector<double>* g = np.tensor.grad();
        const double analytic = g ? (*g)[idx] : 0.0;
        Tensor leaf = np.tensor;
        const double numeric = fd_derivative(build, leaf, idx, 1e-5);
        const double diff = std::fabs(analytic - numeric);
        if (diff <= 1e-9) continue;
        const double rel = diff / std::max(std::fabs(analytic), std::fabs(numeric));
        max_rel = std::max(max_rel, rel);
        if (rel > 1e-4 && fail.str().empty()) {
            fail << np.name << "[" << idx << "]: analytic " << analytic << " vs fd " << numeric;
        }
    }
    const bool ok = fail.str().empty();
    std::ostringstream detail;
    detail << "10 sampled parameters of L_ALL on an 8x8 2-class model, max rel err " << max_rel;
    return finish("gradients/end-to-end", start, ok, ok ? detail.str() : fail.str());
}

CheckResult check_exchange_gate_oracle() {
    const auto start = Clock::now();
    Rng rng(31);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int c = rng.uniform_int(1, 16);
        Tensor rv = random_leaf(rng, {c}, -6.0, 6.0, false);
        Tensor tv = random_leaf(rng, {c}, -6.0, 6.0, false);
        if (trial % 7 == 0) {
            // exercise saturation
            rv.mutable_values()[0] = 50.0;
            tv.mutable_values()[0] = 50.0;
        }
        ChannelDescriptor r{rv, DescriptorSource::Rgb};
        ChannelDescriptor t{tv, DescriptorSource::Thermal};
        Tensor gate = exchange_gate(r, t);
        for (int i = 0; i < c; ++i) {
            const double prod = tv.values()[static_cast<std::size_t>(i)] *
                                rv.values()[static_cast<std::size_t>(i)];
            const double oracle = 1.0 - 1.0 / (1.0 + std::exp(-prod));
            worst = std::max(worst,
                             std::fabs(gate.values()[static_cast<std::size_t>(i)] - oracle));
        }
    }
    const bool ok = worst <= 1e-12;
    return finish("gates/exchange", start, ok,
                  "max |gate - scalar oracle| = " + format_double(worst));
}

CheckResult check_sign_gate_oracle() {
    const auto start = Clock::now();
    Rng rng(37);
    for (int trial = 0; trial < 1000; ++trial) {
        const int c = rng.uniform_int(1, 16);
        Tensor fv = random_leaf(rng, {c}, -3.0, 3.0, false);
        Tensor xv = random_leaf(rng, {c}, -3.0, 3.0, false);
        // inject exact zeros
        for (int i = 0; i < c; ++i) {
            if (rng.uniform() < 0.1) fv.mutable_values()[static_cast<std::size_t>(i)] = 0.0;
            if (rng.uniform() < 0.1) xv.mutable_values()[static_cast<std::size_t>(i)] = 0.0;
        }
        ChannelDescriptor f{fv, DescriptorSource::Fused};
        ChannelDescriptor x{xv, DescriptorSource::Rgb};
        const std::vector<double> gate = sign_consistency_gate(f, x);
        for (int i = 0; i < c; ++i) {
            const std::size_t u = static_cast<std::size_t>(i);
            const double oracle = fv.values()[u] * xv.values()[u] > 0.0 ? 1.0 : 0.0;
            if (gate[u] != oracle) {
                return finish("gates/sign-consistency", start, false,
                              "mismatch at trial " + std::to_string(trial));
            }
        }
    }
    return finish("gates/sign-consistency", start, true,
                  "1000 random descriptor pairs incl. exact zeros");
}

CheckResult check_stop_gradient_isolation() {
    const auto start = Clock::now();
    NetworkConfig cfg;
    cfg.seed = 11;
    ModelParams params = init_params(cfg);
    Rng rng(112);
    Tensor rgb = random_leaf(rng, {3, 16, 16}, 0.0, 1.0, false);
    Tensor t = random_leaf(rng, {1, 16, 16}, 0.0, 1.0, false);
    const std::vector<int> labels = random_labels(rng, 256, 4);
    LossWeights w;
    w.lambda_ce = 0.0;  // regularizers only

    std::vector<NamedParam> all = all_parameters(params);
    auto zero_all = [&] {
        for (NamedParam& np : all) np.tensor.zero_grad();
    };

    zero_all();
    BranchOutputs out = forward_full(params, rgb, t);
    backward(total_loss(out, labels, w, params.fusion).value);

    std::ostringstream fail;
    bool rgb_dec_nonzero = false, t_dec_nonzero = false;
    for (const NamedParam& np : all) {
        switch (np.group) {
            case ParamGroup::Sff:
            case ParamGroup::FusedDecoder:
                if (!grad_all_zero(np.tensor) && fail.str().empty()) {
                    fail << param_group_name(np.group) << "/" << np.name
                         << " received gradient through a stop-gradient target";
                }
                break;
            case ParamGroup::RgbDecoder:
                rgb_dec_nonzero = rgb_dec_nonzero || grad_any_nonzero(np.tensor);
                break;
            case ParamGroup::TDecoder:
                t_dec_nonzero = t_dec_nonzero || grad_any_nonzero(np.tensor);
                break;
            default:
                break;  // encoders are reached through the unimodal branches here
        }
    }
    if (!rgb_dec_nonzero && fail.str().empty()) fail << "rgb decoder received no gradient";
    if (!t_dec_nonzero && fail.str().empty()) fail << "thermal decoder received no gradient";

    // With the unimodal branches detached, the fused path is the only route
    // to the encoders; the stop-gradient targets must sever it completely.
    zero_all();
    ForwardOptions opts;
    opts.detach_unimodal_branch = true;
    BranchOutputs out2 = forward_full(params, rgb, t, opts);
    backward(total_loss(out2, labels, w, params.fusion).value);
    for (const NamedParam& np : all) {
        if ((np.group == ParamGroup::RgbEncoder || np.group == ParamGroup::TEncoder) &&
            !grad_all_zero(np.tensor) && fail.str().empty()) {
            fail << param_group_name(np.group) << "/" << np.name
                 << " received gradient through the fused path";
        }
    }

    const bool ok = fail.str().empty();
    return finish("stop-gradient/isolation", start, ok,
                  ok ? "exact zeros on sff, fused decoder, and encoder fused paths" : fail.str());
}

CheckResult check_rdr_mask_oracle() {
    const auto start = Clock::now();
    Rng rng(41);
    for (int trial = 0; trial < 100; ++trial) {
        const int c = rng.uniform_int(2, 5);
        const int h = rng.uniform_int(1, 4), w = rng.uniform_int(1, 4);
        Tensor logits = random_leaf(rng, {c, h, w}, -3.0, 3.0, false);
        if (trial % 9 == 0) {
            // force exact ties; the smallest index must win
            for (auto& v : logits.mutable_values()) v = 0.0;
        }
        Tensor p = softmax(logits, 0);
        ClassMask mask = onehot_mask(p);
        const std::size_t hw = static_cast<std::size_t>(h) * w;
        for (std::size_t px = 0; px < hw; ++px) {
            int best = 0;
            double nonzero = 0;
            for (int ch = 0; ch < c; ++ch) {
                const std::size_t u = static_cast<std::size_t>(ch) * hw + px;
                if (p.values()[u] > p.values()[static_cast<std::size_t>(best) * hw + px]) best = ch;
                if (mask.m.values()[u] != 0.0) nonzero += 1;
            }
            for (int ch = 0; ch < c; ++ch) {
                const std::size_t u = static_cast<std::size_t>(ch) * hw + px;
                const double want = ch == best ? 1.0 : 0.0;
                if (mask.m.values()[u] != want) {
                    return finish("rdr/one-hot-mask", start, false,
                                  "mask disagrees with per-pixel argmax at trial " +
                                      std::to_string(trial));
                }
            }
            if (nonzero != 1.0) {
                return finish("rdr/one-hot-mask", start, false, "mask is not one-hot");
            }
        }
    }
    return finish("rdr/one-hot-mask", start, true,
                  "100 random probability maps, smallest-index tie-break");
}

CheckResult check_metric_oracle() {
    const auto start = Clock::now();
    Rng rng(47);

    // spec hand case: IoU (1/2, 2/3), mIoU 7/12
    {
        ConfusionMatrix cm(2);
        cm.add({0, 0, 1, 1}, {0, 1, 1, 1});
        const auto pc = per_class_metrics(cm);
        const bool hand = pc[0].iou == 0.5 && pc[1].iou == 2.0 / 3.0 &&
                          mean_iou(cm) == (0.5 + 2.0 / 3.0) / 2.0 &&
                          std::fabs(mean_iou(cm) - 7.0 / 12.0) < 1e-15;
        if (!hand) return finish("metrics/oracle", start, false, "hand case failed");
    }

    for (int trial = 0; trial < 20; ++trial) {
        const int classes = rng.uniform_int(2, 5);
        const std::size_t n = static_cast<std::size_t>(rng.uniform_int(8, 64));
        std::vector<int> pred(n), ref(n);
        for (std::size_t i = 0; i < n; ++i) {
            pred[i] = rng.uniform_int(0, classes - 1);
            // leave some classes unused occasionally
            ref[i] = rng.uniform_int(0, classes - 1) % std::max(1, classes - trial % 2);
        }
        ConfusionMatrix cm(classes);
        cm.add(pred, ref);

        // independent per-pixel tally
        double iou_sum = 0.0, rec_sum = 0.0;
        int iou_n = 0, rec_n = 0;
        for (int c = 0; c < classes; ++c) {
            std::uint64_t tp = 0, fp = 0, fn = 0, in_ref = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (ref[i] == c) ++in_ref;
                if (pred[i] == c && ref[i] == c) ++tp;
                if (pred[i] == c && ref[i] != c) ++fp;
                if (pred[i] != c && ref[i] == c) ++fn;
            }
            if (tp + fp + fn > 0) {
                iou_sum += static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
                ++iou_n;
            }
            if (in_ref > 0) {
                rec_sum += static_cast<double>(tp) / static_cast<double>(in_ref);
                ++rec_n;
            }
        }
        const double oracle_miou = iou_n ? iou_sum / iou_n : 0.0;
        const double oracle_macc = rec_n ? rec_sum / rec_n : 0.0;
        if (mean_iou(cm) != oracle_miou || mean_acc(cm) != oracle_macc) {
            return finish("metrics/oracle", start, false,
                          "tally oracle disagreed at trial " + std::to_string(trial));
        }
    }
    return finish("metrics/oracle", start, true, "hand case plus 20 random map pairs, exact");
}

CheckResult check_broadcast_tiling() {
    const auto start = Clock::now();
    Rng rng(53);
    for (int trial = 0; trial < 20; ++trial) {
        const int c = rng.uniform_int(1, 5), h = rng.uniform_int(1, 5), w = rng.uniform_int(1, 5);
        Tensor vec = random_leaf(rng, {c}, -2.0, 2.0, false);
        Tensor map = random_leaf(rng, {c, h, w}, -2.0, 2.0, false);
        std::vector<double> tiled(static_cast<std::size_t>(c) * h * w);
        for (int ch = 0; ch < c; ++ch) {
            for (int px = 0; px < h * w; ++px) {
                tiled[static_cast<std::size_t>(ch) * h * w + px] =
                    vec.values()[static_cast<std::size_t>(ch)];
            }
        }
        Tensor expanded({c, h, w}, std::move(tiled));
        Tensor a = mul(vec, map);
        Tensor b = mul(expanded, map);
        for (std::size_t i = 0; i < a.numel(); ++i) {
            if (a.values()[i] != b.values()[i]) {
                return finish("broadcast/tiling", start, false,
                              "broadcast differs from materialized tiling");
            }
        }
    }
    return finish("broadcast/tiling", start, true, "20 random [C] vs [C,H,W] expansions, exact");
}

CheckResult check_parameter_separability() {
    const auto start = Clock::now();
    NetworkConfig cfg;
    cfg.seed = 19;
    ModelParams params = init_params(cfg);
    Rng rng(191);
    Tensor rgb = random_leaf(rng, {3, 16, 16}, 0.0, 1.0, false);
    Tensor t = random_leaf(rng, {1, 16, 16}, 0.0, 1.0, false);

    BranchOutputs out = forward_full(params, rgb, t);

    const auto tmp = std::filesystem::temp_directory_path() /
                     ("rtfd_verify_" + std::to_string(::getpid()) + ".rtfd");
    save_bundle(tmp.string(), params);

    // fresh model, different values everywhere, then load only the rgb groups
    NetworkConfig other = cfg;
    other.seed = 999;
    ModelParams partial = init_params(other);
    load_bundle(tmp.string(), partial, {"rgb_encoder", "rgb_decoder"});
    // perturb every non-loaded group
    for (NamedParam& np : all_parameters(partial)) {
        if (np.group != ParamGroup::RgbEncoder && np.group != ParamGroup::RgbDecoder) {
            for (auto& v : np.tensor.mutable_values()) v += rng.uniform(0.5, 1.5);
        }
    }
    Tensor uni = forward_unimodal(partial.rgb_encoder, partial.rgb_decoder, rgb);
    std::filesystem::remove(tmp);

    if (uni.values() != out.p_rgb.values()) {
        return finish("model/parameter-separability", start, false,
                      "rgb unimodal output changed under non-loaded-group perturbation");
    }

    // thermal side, sharing tensors directly
    Tensor uni_t = forward_unimodal(params.t_encoder, params.t_decoder, t);
    if (uni_t.values() != out.p_t.values()) {
        return finish("model/parameter-separability", start, false,
                      "thermal branch of forward_full differs from forward_unimodal");
    }
    return finish("model/parameter-separability", start, true,
                  "bit-identical unimodal outputs, invariant to other groups");
}

std::vector<CheckResult> run_verification_suites() {
    return {
        check_op_gradients(),       check_end_to_end_gradient(), check_exchange_gate_oracle(),
        check_sign_gate_oracle(),   check_stop_gradient_isolation(),
        check_rdr_mask_oracle(),    check_metric_oracle(),       check_broadcast_tiling(),
        check_parameter_separability(),
    };
}

}  // namespace rtfd
