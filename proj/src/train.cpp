#include "rtfd/train.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace rtfd {

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

AdamW::AdamW(const std::vector<NamedParam>& params, const AdamWConfig& cfg) : cfg_(cfg) {
    for (const NamedParam& np : params) {
        const bool encoder =
            np.group == ParamGroup::RgbEncoder || np.group == ParamGroup::TEncoder;
        slots_.push_back(Slot{np.tensor, encoder ? cfg.lr_encoder : cfg.lr_decoder,
                              std::vector<double>(np.tensor.numel(), 0.0),
                              std::vector<double>(np.tensor.numel(), 0.0)});
    }
}

void AdamW::zero_grad() {
    for (Slot& s : slots_) s.param.zero_grad();
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (Slot& s : slots_) {
        const std::vector<double>* grad = s.param.grad();
        auto& p = s.param.mutable_values();
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double g = grad ? (*grad)[i] : 0.0;
            s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g;
            s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = s.m[i] / bc1;
            const double vhat = s.v[i] / bc2;
            p[i] -= s.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p[i]);
        }
    }
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

namespace {

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int>(i) - 1));
        std::swap(idx[i - 1], idx[j]);
    }
}

void accumulate(LossBreakdown& into, const LossBreakdown& b) {
    into.ce_fuse += b.ce_fuse;
    into.ce_rgb += b.ce_rgb;
    into.ce_t += b.ce_t;
    into.cmdr += b.cmdr;
    into.rdr += b.rdr;
    into.total += b.total;
}

void scale(LossBreakdown& b, double s) {
    b.ce_fuse *= s;
    b.ce_rgb *= s;
    b.ce_t *= s;
    b.cmdr *= s;
    b.rdr *= s;
    b.total *= s;
}

}  // namespace

TrainResult train(const Corpus& corpus, const TrainConfig& cfg) {
    if (corpus.spec.num_classes != cfg.net.num_classes) {
        throw DomainError("train: corpus has " + std::to_string(corpus.spec.num_classes) +
                          " classes, model expects " + std::to_string(cfg.net.num_classes));
    }
    if (corpus.train.empty()) throw DomainError("train: empty training split");

    NetworkConfig net = cfg.net;
    net.seed = cfg.seed;
    TrainResult result{init_params(net), {}};
    AdamW opt(all_parameters(result.params), cfg.opt);

    Rng shuffle_rng = Rng(cfg.seed).fork(0x5u);
    std::vector<std::size_t> order(corpus.train.size());
    std::iota(order.begin(), order.end(), 0);

    bool have_checkpoint = false;
    const int batch = std::max(cfg.batch_size, 1);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_indices(order, shuffle_rng);
        LossBreakdown epoch_sum;
        for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(batch)) {
            const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(batch));
            const double inv = 1.0 / static_cast<double>(end - begin);
            Tensor batch_loss = Tensor::scalar(0.0);
            for (std::size_t k = begin; k < end; ++k) {
                const BimodalSample& s = corpus.train[order[k]];
                BranchOutputs out = forward_full(result.params, s.rgb, s.thermal);
                TotalLoss tl = total_loss(out, s.label, cfg.weights, result.params.fusion);
                if (!std::isfinite(tl.breakdown.total)) {
                    throw NumericError(
                        "train: non-finite loss at epoch " + std::to_string(epoch) +
                        (have_checkpoint ? ", last good checkpoint: " + cfg.checkpoint_path
                                         : ", no checkpoint written yet"));
                }
                accumulate(epoch_sum, tl.breakdown);
                batch_loss = add(batch_loss, scalar_mul(tl.value, inv));
            }
            opt.zero_grad();
            backward(batch_loss);
            opt.step();
        }
        scale(epoch_sum, 1.0 / static_cast<double>(order.size()));
        result.log.push_back(EpochLog{epoch, epoch_sum});
        if (!cfg.checkpoint_path.empty()) {
            save_bundle(cfg.checkpoint_path, result.params);
            have_checkpoint = true;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

const char* condition_name(EvalCondition c) {
    switch (c) {
        case EvalCondition::Rgbt: return "rgbt";
        case EvalCondition::RgbOnly: return "rgb";
        default: return "t";
    }
}

EvalReport evaluate(const ModelParams& params, const std::vector<BimodalSample>& samples,
                    EvalCondition condition, EvalRoute route) {
    autograd::NoGradGuard no_grad;
    EvalReport report;
    report.condition = condition;
    report.route = route;
    report.cm = ConfusionMatrix(params.config.num_classes);

    for (const BimodalSample& s : samples) {
        Tensor prob;
        if (condition == EvalCondition::Rgbt) {
            prob = forward_full(params, s.rgb, s.thermal).p_fuse;
        } else if (route == EvalRoute::Branch) {
            if (condition == EvalCondition::RgbOnly) {
                prob = forward_unimodal(params.rgb_encoder, params.rgb_decoder, s.rgb);
            } else {
                prob = forward_unimodal(params.t_encoder, params.t_decoder, s.thermal);
            }
        } else {
            // fused branch with the missing modality dropped to zeros
            const BimodalSample dropped = drop_modality(
                s, condition == EvalCondition::RgbOnly ? Modality::Thermal : Modality::Rgb,
                DropMode::Zero);
            prob = forward_full(params, dropped.rgb, dropped.thermal).p_fuse;
        }
        report.cm.add(argmax_classes(prob), s.label);
    }
    report.miou = mean_iou(report.cm);
    report.macc = mean_acc(report.cm);

    if (condition == EvalCondition::Rgbt || route == EvalRoute::ZeroFilledFused) {
        report.groups_used = {"rgb_encoder", "t_encoder", "sff", "fused_decoder"};
    } else if (condition == EvalCondition::RgbOnly) {
        report.groups_used = {"rgb_encoder", "rgb_decoder"};
    } else {
        report.groups_used = {"t_encoder", "t_decoder"};
    }
    return report;
}

// ---------------------------------------------------------------------------
// ablation
// ---------------------------------------------------------------------------

std::vector<AblationVariant> standard_variants() {
    return {
        {"baseline-add", FusionKind::AdditionProjection, 0.0, 0.0},
        {"+SFF", FusionKind::Sff, 0.0, 0.0},
        {"+CMDR", FusionKind::AdditionProjection, 0.5, 0.0},
        {"+RDR", FusionKind::AdditionProjection, 0.0, 1.0},
        {"full", FusionKind::Sff, 0.5, 1.0},
    };
}

std::optional<AblationVariant> variant_by_name(const std::string& name) {
    std::string lower;
    for (char c : name) lower.push_back(static_cast<char>(std::tolower(c)));
    for (const AblationVariant& v : standard_variants()) {
        std::string vlow;
        for (char c : v.name) vlow.push_back(static_cast<char>(std::tolower(c)));
        if (lower == vlow || ("+" + lower) == vlow) return v;
    }
    return std::nullopt;
}

std::vector<AblationRow> ablation_run(const Corpus& corpus,
                                      const std::vector<AblationVariant>& variants,
                                      const std::vector<std::uint64_t>& seeds,
                                      const TrainConfig& base, int jobs) {
    struct Job {
        AblationVariant variant;
        std::uint64_t seed;
    };
    std::vector<Job> queue;
    for (const AblationVariant& v : variants) {
        for (std::uint64_t s : seeds) queue.push_back({v, s});
    }
    std::vector<AblationRow> rows(queue.size());

    std::mutex next_mutex;
    std::size_t next = 0;
    auto worker = [&] {
        for (;;) {
            std::size_t mine;
            {
                std::lock_guard<std::mutex> lock(next_mutex);
                if (next >= queue.size()) return;
                mine = next++;
            }
            const Job& job = queue[mine];
            TrainConfig cfg = base;
            cfg.net.fusion = job.variant.fusion;
            cfg.weights.lambda_cmdr = job.variant.lambda_cmdr;
            cfg.weights.lambda_rdr = job.variant.lambda_rdr;
            cfg.seed = job.seed;
            cfg.checkpoint_path.clear();
            TrainResult trained = train(corpus, cfg);

            AblationRow row;
            row.variant = job.variant.name;
            row.seed = job.seed;
            EvalReport rgbt = evaluate(trained.params, corpus.test, EvalCondition::Rgbt);
            EvalReport rgb = evaluate(trained.params, corpus.test, EvalCondition::RgbOnly);
            EvalReport t = evaluate(trained.params, corpus.test, EvalCondition::TOnly);
            EvalReport rgb_zf = evaluate(trained.params, corpus.test, EvalCondition::RgbOnly,
                                         EvalRoute::ZeroFilledFused);
            EvalReport t_zf = evaluate(trained.params, corpus.test, EvalCondition::TOnly,
                                       EvalRoute::ZeroFilledFused);
            row.rgbt_miou = rgbt.miou;
            row.rgbt_macc = rgbt.macc;
            row.rgb_miou = rgb.miou;
            row.rgb_macc = rgb.macc;
            row.t_miou = t.miou;
            row.t_macc = t.macc;
            row.rgb_zerofill_miou = rgb_zf.miou;
            row.t_zerofill_miou = t_zf.miou;
            row.final_ce_fuse = trained.log.back().mean.ce_fuse;
            rows[mine] = row;
        }
    };

    const int n = std::max(1, std::min<int>(jobs, static_cast<int>(queue.size())));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < n; ++i) pool.emplace_back(worker);
        for (std::thread& th : pool) th.join();
    }
    return rows;
}

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string epochs_csv(const std::vector<EpochLog>& log) {
    std::ostringstream os;
    os << "epoch,l_ce_fuse,l_ce_rgb,l_ce_t,l_cmdr,l_rdr,l_total\n";
    for (const EpochLog& e : log) {
        os << e.epoch << ',' << format_double(e.mean.ce_fuse) << ',' << format_double(e.mean.ce_rgb)
           << ',' << format_double(e.mean.ce_t) << ',' << format_double(e.mean.cmdr) << ','
           << format_double(e.mean.rdr) << ',' << format_double(e.mean.total) << '\n';
    }
    return os.str();
}

namespace {
std::string join(const std::vector<std::string>& parts, char sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out.push_back(sep);
        out += parts[i];
    }
    return out;
}
}  // namespace

std::string report_csv(const EvalReport& report) {
    std::ostringstream os;
    os << "class,tp,fp,fn,iou,recall\n";
    const auto per_class = per_class_metrics(report.cm);
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        const ClassMetrics& m = per_class[c];
        os << c << ',' << m.tp << ',' << m.fp << ',' << m.fn << ','
           << (m.present ? format_double(m.iou) : "absent") << ','
           << (m.in_ref ? format_double(m.recall) : "absent") << '\n';
    }
    os << "mean,,,," << format_double(report.miou) << ',' << format_double(report.macc) << '\n';
    return os.str();
}

std::string report_text(const EvalReport& report) {
    std::ostringstream os;
    os << "condition: " << condition_name(report.condition) << '\n';
    os << "route: " << (report.route == EvalRoute::Branch ? "branch" : "zero-filled fused")
       << '\n';
    os << "groups_used: " << join(report.groups_used, ',') << '\n';
    os << "pixels: " << report.cm.total() << '\n';
    const auto per_class = per_class_metrics(report.cm);
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        const ClassMetrics& m = per_class[c];
        os << "class " << c << ": iou=" << (m.present ? format_double(m.iou) : "absent")
           << " recall=" << (m.in_ref ? format_double(m.recall) : "absent") << " tp=" << m.tp
           << " fp=" << m.fp << " fn=" << m.fn << '\n';
    }
    os << "mIoU: " << format_double(report.miou) << '\n';
    os << "mAcc: " << format_double(report.macc) << '\n';
    return os.str();
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "variant,seed,rgbt_miou,rgbt_macc,rgb_miou,rgb_macc,t_miou,t_macc,"
          "rgb_zerofill_miou,t_zerofill_miou\n";
    for (const AblationRow& r : rows) {
        os << r.variant << ',' << r.seed << ',' << format_double(r.rgbt_miou) << ','
           << format_double(r.rgbt_macc) << ',' << format_double(r.rgb_miou) << ','
           << format_double(r.rgb_macc) << ',' << format_double(r.t_miou) << ','
           << format_double(r.t_macc) << ',' << format_double(r.rgb_zerofill_miou) << ','
           << format_double(r.t_zerofill_miou) << '\n';
    }
    return os.str();
}

std::string ablation_summary_csv(const std::vector<AblationRow>& rows) {
    // keep first-appearance order of variants
    std::vector<std::string> names;
    std::map<std::string, std::pair<AblationRow, int>> agg;
    for (const AblationRow& r : rows) {
        auto it = agg.find(r.variant);
        if (it == agg.end()) {
            names.push_back(r.variant);
            agg.emplace(r.variant, std::make_pair(r, 1));
        } else {
            AblationRow& a = it->second.first;
            a.rgbt_miou += r.rgbt_miou;
            a.rgb_miou += r.rgb_miou;
            a.t_miou += r.t_miou;
            a.rgb_zerofill_miou += r.rgb_zerofill_miou;
            a.t_zerofill_miou += r.t_zerofill_miou;
            it->second.second += 1;
        }
    }
    std::ostringstream os;
    os << "variant,seeds,rgb_miou,t_miou,rgbt_miou,rgb_zerofill_miou,t_zerofill_miou\n";
    for (const std::string& name : names) {
        const auto& [sum, n] = agg.at(name);
        const double inv = 1.0 / n;
        os << name << ',' << n << ',' << format_double(sum.rgb_miou * inv) << ','
           << format_double(sum.t_miou * inv) << ',' << format_double(sum.rgbt_miou * inv) << ','
           << format_double(sum.rgb_zerofill_miou * inv) << ','
           << format_double(sum.t_zerofill_miou * inv) << '\n';
    }
    return os.str();
}

}  // namespace rtfd
