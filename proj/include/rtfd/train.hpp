#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rtfd/data.hpp"
#include "rtfd/losses.hpp"
#include "rtfd/metrics.hpp"
#include "rtfd/model.hpp"

namespace rtfd {

// ---- optimizer ----

struct AdamWConfig {
    double lr_encoder = 1e-4;
    double lr_decoder = 6e-4;  // also the fusion blocks
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// AdamW with decoupled weight decay and a per-group learning rate (encoder
// groups vs everything else).
class AdamW {
public:
    AdamW(const std::vector<NamedParam>& params, const AdamWConfig& cfg);

    void zero_grad();
    void step();
    long step_count() const { return t_; }

private:
    struct Slot {
        Tensor param;
        double lr;
        std::vector<double> m, v;
    };
    std::vector<Slot> slots_;
    AdamWConfig cfg_;
    long t_ = 0;
};

// ---- training ----

struct TrainConfig {
    NetworkConfig net;
    AdamWConfig opt;
    LossWeights weights;
    int epochs = 40;
    int batch_size = 4;
    std::uint64_t seed = 0;  // parameter init and shuffling
    std::string checkpoint_path;  // per-epoch bundle when non-empty
};

struct EpochLog {
    int epoch = 0;
    LossBreakdown mean;  // per-sample mean over the epoch
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochLog> log;
};

/// Deterministic given the config seed. Throws NumericError (mentioning the
/// last checkpoint, if any) when the loss stops being finite.
TrainResult train(const Corpus& corpus, const TrainConfig& cfg);

// ---- evaluation ----

enum class EvalCondition { Rgbt, RgbOnly, TOnly };
enum class EvalRoute {
    Branch,           // missing-modality conditions served by the unimodal branch
    ZeroFilledFused,  // fused branch fed zeros for the missing modality
};

const char* condition_name(EvalCondition c);

struct EvalReport {
    EvalCondition condition = EvalCondition::Rgbt;
    EvalRoute route = EvalRoute::Branch;
    ConfusionMatrix cm{1};
    double miou = 0.0;
    double macc = 0.0;
    std::vector<std::string> groups_used;
};

EvalReport evaluate(const ModelParams& params, const std::vector<BimodalSample>& samples,
                    EvalCondition condition, EvalRoute route = EvalRoute::Branch);

// ---- ablation ----

struct AblationVariant {
    std::string name;
    FusionKind fusion = FusionKind::Sff;
    double lambda_cmdr = 0.0;
    double lambda_rdr = 0.0;
};

/// baseline-add, +SFF, +CMDR, +RDR, full.
std::vector<AblationVariant> standard_variants();
std::optional<AblationVariant> variant_by_name(const std::string& name);

struct AblationRow {
    std::string variant;
    std::uint64_t seed = 0;
    double rgbt_miou = 0, rgbt_macc = 0;
    // missing-modality conditions served by the matching unimodal branch
    double rgb_miou = 0, rgb_macc = 0;
    double t_miou = 0, t_macc = 0;
    // same conditions served by the fused branch with zero-filled inputs
    double rgb_zerofill_miou = 0;
    double t_zerofill_miou = 0;
    double final_ce_fuse = 0;  // last-epoch mean fused-branch cross entropy
};

/// Trains every (variant, seed) pair with the shared base schedule and
/// evaluates all five condition/route combinations on the test split. Runs
/// are independent; `jobs` of them execute in parallel worker threads.
std::vector<AblationRow> ablation_run(const Corpus& corpus,
                                      const std::vector<AblationVariant>& variants,
                                      const std::vector<std::uint64_t>& seeds,
                                      const TrainConfig& base, int jobs = 1);

// ---- csv/report rendering (deterministic, '.' decimal separator) ----

std::string format_double(double v);
std::string epochs_csv(const std::vector<EpochLog>& log);
std::string report_csv(const EvalReport& report);
std::string report_text(const EvalReport& report);
std::string ablation_csv(const std::vector<AblationRow>& rows);
/// Per-variant means over seeds, mirroring the ablation table layout
/// (variant, RGB mIoU, Thermal mIoU).
std::string ablation_summary_csv(const std::vector<AblationRow>& rows);

}  // namespace rtfd
