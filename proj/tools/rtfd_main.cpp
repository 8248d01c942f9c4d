// rtfd: synthetic bimodal segmentation workbench.
// Subcommands: gen-data, train, eval, ablate, verify.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "rtfd/data.hpp"
#include "rtfd/model.hpp"
#include "rtfd/train.hpp"
#include "rtfd/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rtfd;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitVerification = 4;

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
    f << text;
}

// ---- shared training configuration (train + ablate) ----

struct TrainCli {
    std::string corpus;
    std::string out;
    int epochs = 40;
    int batch = 4;
    double lr_encoder = 1e-4;
    double lr_decoder = 6e-4;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double lambda_cmdr = 0.5;
    double lambda_rdr = 1.0;
    double lambda_ce = 1.0;
    std::vector<int> widths{8, 16, 32};
    std::string fusion = "sff";
    std::uint64_t seed = 0;
};

void add_train_flags(CLI::App* cmd, TrainCli& t, bool want_lambdas) {
    cmd->add_option("--corpus", t.corpus, "corpus container path");
    cmd->add_option("--out", t.out, "output directory");
    cmd->add_option("--epochs", t.epochs, "training epochs");
    cmd->add_option("--batch", t.batch, "batch size");
    cmd->add_option("--lr-encoder", t.lr_encoder, "encoder learning rate");
    cmd->add_option("--lr-decoder", t.lr_decoder, "decoder/fusion learning rate");
    cmd->add_option("--weight-decay", t.weight_decay, "decoupled weight decay");
    cmd->add_option("--beta1", t.beta1, "first-moment coefficient");
    cmd->add_option("--beta2", t.beta2, "second-moment coefficient");
    cmd->add_option("--eps", t.eps, "optimizer epsilon");
    if (want_lambdas) {
        cmd->add_option("--lambda-cmdr", t.lambda_cmdr, "feature-decouple loss weight");
        cmd->add_option("--lambda-rdr", t.lambda_rdr, "prediction-decouple loss weight");
        cmd->add_option("--lambda-ce", t.lambda_ce, "cross-entropy weight");
        cmd->add_option("--fusion", t.fusion, "fusion block: sff or add")
            ->check(CLI::IsMember({"sff", "add"}));
    }
    cmd->add_option("--widths", t.widths, "encoder stage widths")->delimiter(',');
    cmd->add_option("--seed", t.seed, "run seed (init + shuffling)");
}

json train_cli_json(const TrainCli& t) {
    return json{{"corpus", t.corpus},
                {"out", t.out},
                {"epochs", t.epochs},
                {"batch", t.batch},
                {"lr_encoder", t.lr_encoder},
                {"lr_decoder", t.lr_decoder},
                {"weight_decay", t.weight_decay},
                {"beta1", t.beta1},
                {"beta2", t.beta2},
                {"eps", t.eps},
                {"lambda_cmdr", t.lambda_cmdr},
                {"lambda_rdr", t.lambda_rdr},
                {"lambda_ce", t.lambda_ce},
                {"widths", t.widths},
                {"fusion", t.fusion},
                {"seed", t.seed}};
}

void train_cli_from_json(const json& j, TrainCli& t) {
    j.at("corpus").get_to(t.corpus);
    if (j.contains("out")) j.at("out").get_to(t.out);
    j.at("epochs").get_to(t.epochs);
    j.at("batch").get_to(t.batch);
    j.at("lr_encoder").get_to(t.lr_encoder);
    j.at("lr_decoder").get_to(t.lr_decoder);
    j.at("weight_decay").get_to(t.weight_decay);
    j.at("beta1").get_to(t.beta1);
    j.at("beta2").get_to(t.beta2);
    j.at("eps").get_to(t.eps);
    j.at("lambda_cmdr").get_to(t.lambda_cmdr);
    j.at("lambda_rdr").get_to(t.lambda_rdr);
    j.at("lambda_ce").get_to(t.lambda_ce);
    j.at("widths").get_to(t.widths);
    j.at("fusion").get_to(t.fusion);
    j.at("seed").get_to(t.seed);
}

TrainConfig to_train_config(const TrainCli& t) {
    TrainConfig cfg;
    cfg.net.widths = t.widths;
    cfg.net.fusion = t.fusion == "add" ? FusionKind::AdditionProjection : FusionKind::Sff;
    cfg.opt.lr_encoder = t.lr_encoder;
    cfg.opt.lr_decoder = t.lr_decoder;
    cfg.opt.weight_decay = t.weight_decay;
    cfg.opt.beta1 = t.beta1;
    cfg.opt.beta2 = t.beta2;
    cfg.opt.eps = t.eps;
    cfg.weights.lambda_cmdr = t.lambda_cmdr;
    cfg.weights.lambda_rdr = t.lambda_rdr;
    cfg.weights.lambda_ce = t.lambda_ce;
    cfg.epochs = t.epochs;
    cfg.batch_size = t.batch;
    cfg.seed = t.seed;
    return cfg;
}

// Applies an echoed config as new defaults; flags the user actually passed
// keep their parsed values.
void merge_config_file(CLI::App* cmd, const std::string& path, TrainCli& t) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file '" + path + "'");
    const json j = json::parse(f);
    const TrainCli parsed = t;
    TrainCli merged = t;
    train_cli_from_json(j, merged);
    auto keep = [&](const char* flag) {
        const CLI::Option* o = cmd->get_option_no_throw(flag);
        return o && o->count() > 0;
    };
    if (keep("--corpus")) merged.corpus = parsed.corpus;
    if (keep("--out")) merged.out = parsed.out;
    if (keep("--epochs")) merged.epochs = parsed.epochs;
    if (keep("--batch")) merged.batch = parsed.batch;
    if (keep("--lr-encoder")) merged.lr_encoder = parsed.lr_encoder;
    if (keep("--lr-decoder")) merged.lr_decoder = parsed.lr_decoder;
    if (keep("--weight-decay")) merged.weight_decay = parsed.weight_decay;
    if (keep("--beta1")) merged.beta1 = parsed.beta1;
    if (keep("--beta2")) merged.beta2 = parsed.beta2;
    if (keep("--eps")) merged.eps = parsed.eps;
    if (keep("--lambda-cmdr")) merged.lambda_cmdr = parsed.lambda_cmdr;
    if (keep("--lambda-rdr")) merged.lambda_rdr = parsed.lambda_rdr;
    if (keep("--lambda-ce")) merged.lambda_ce = parsed.lambda_ce;
    if (keep("--fusion")) merged.fusion = parsed.fusion;
    if (keep("--widths")) merged.widths = parsed.widths;
    if (keep("--seed")) merged.seed = parsed.seed;
    t = merged;
}

// ---- subcommand bodies ----

int run_gen_data(const CorpusSpec& spec, const std::string& out, int stages) {
    const int div = 1 << stages;
    if (spec.height % div != 0 || spec.width % div != 0) {
        std::cerr << "gen-data: extents " << spec.height << "x" << spec.width
                  << " must be divisible by " << div << " (encoder depth " << stages << ")\n";
        return kExitUsage;
    }
    Corpus corpus = generate(spec);
    save_corpus(out, corpus);

    std::ostringstream echo;
    echo << "corpus: " << out << '\n'
         << "train_count: " << spec.train_count << '\n'
         << "test_count: " << spec.test_count << '\n'
         << "height: " << spec.height << '\n'
         << "width: " << spec.width << '\n'
         << "num_classes: " << spec.num_classes << '\n'
         << "objects_per_image: " << spec.min_objects << ".." << spec.max_objects << '\n'
         << "noise_sigma: " << format_double(spec.noise_sigma) << '\n'
         << "seed: " << spec.seed << '\n'
         << "class semantics: 0 background, 1 RGB-only, 2 thermal-only, 3 both\n";
    write_text(out + ".spec.txt", echo.str());
    std::cout << "wrote " << corpus.train.size() << " train and " << corpus.test.size()
              << " test samples to " << out << "\n";
    return kExitOk;
}

int run_train(const TrainCli& t) {
    fs::create_directories(t.out);
    Corpus corpus = load_corpus(t.corpus);
    TrainConfig cfg = to_train_config(t);
    cfg.checkpoint_path = (fs::path(t.out) / "checkpoint.rtfd").string();

    json echo = train_cli_json(t);
    echo["command"] = "train";
    write_text(fs::path(t.out) / "config.echo.json", echo.dump(2) + "\n");

    TrainResult result = train(corpus, cfg);
    save_bundle((fs::path(t.out) / "bundle.rtfd").string(), result.params);
    write_text(fs::path(t.out) / "epochs.csv", epochs_csv(result.log));
    const LossBreakdown& last = result.log.back().mean;
    std::cout << "trained " << cfg.epochs << " epochs; final l_total "
              << format_double(last.total) << " (ce_fuse " << format_double(last.ce_fuse)
              << ")\n";
    std::cout << "bundle: " << (fs::path(t.out) / "bundle.rtfd").string() << "\n";
    return kExitOk;
}

int run_eval(const std::string& bundle, const std::string& corpus_path,
             const std::string& condition, bool zero_fill, const std::string& split,
             const std::string& out, std::string config_path) {
    if (config_path.empty()) {
        config_path = (fs::path(bundle).parent_path() / "config.echo.json").string();
    }
    std::ifstream cf(config_path);
    if (!cf) throw IoError("cannot open model config '" + config_path + "'");
    TrainCli t;
    train_cli_from_json(json::parse(cf), t);

    Corpus corpus = load_corpus(corpus_path);
    TrainConfig cfg = to_train_config(t);
    cfg.net.seed = t.seed;
    ModelParams params = init_params(cfg.net);

    EvalCondition cond = condition == "rgbt"  ? EvalCondition::Rgbt
                         : condition == "rgb" ? EvalCondition::RgbOnly
                                              : EvalCondition::TOnly;
    EvalRoute route = zero_fill ? EvalRoute::ZeroFilledFused : EvalRoute::Branch;

    std::vector<std::string> groups;
    if (cond == EvalCondition::Rgbt || route == EvalRoute::ZeroFilledFused) {
        groups = {};  // whole bundle
    } else if (cond == EvalCondition::RgbOnly) {
        groups = {"rgb_encoder", "rgb_decoder"};
    } else {
        groups = {"t_encoder", "t_decoder"};
    }
    const std::vector<std::string> loaded = load_bundle(bundle, params, groups);

    EvalReport report =
        evaluate(params, split == "train" ? corpus.train : corpus.test, cond, route);
    report.groups_used = loaded;

    fs::create_directories(out);
    const std::string stem =
        std::string("report-") + condition_name(cond) + (zero_fill ? "-zerofill" : "");
    write_text(fs::path(out) / (stem + ".csv"), report_csv(report));
    write_text(fs::path(out) / (stem + ".txt"), report_text(report));
    std::cout << report_text(report);
    return kExitOk;
}

int run_ablate(const TrainCli& t, const std::vector<std::string>& variant_names,
               const std::vector<std::uint64_t>& seeds, int jobs) {
    std::vector<AblationVariant> variants;
    for (const std::string& name : variant_names) {
        auto v = variant_by_name(name);
        if (!v) {
            std::cerr << "ablate: unknown variant '" << name
                      << "' (expected baseline-add, +SFF, +CMDR, +RDR, full)\n";
            return kExitUsage;
        }
        variants.push_back(*v);
    }
    fs::create_directories(t.out);
    Corpus corpus = load_corpus(t.corpus);
    TrainConfig base = to_train_config(t);

    json echo = train_cli_json(t);
    echo["command"] = "ablate";
    echo["variants"] = variant_names;
    echo["seeds"] = seeds;
    write_text(fs::path(t.out) / "config.echo.json", echo.dump(2) + "\n");

    const std::vector<AblationRow> rows = ablation_run(corpus, variants, seeds, base, jobs);
    write_text(fs::path(t.out) / "ablation.csv", ablation_csv(rows));
    write_text(fs::path(t.out) / "ablation_summary.csv", ablation_summary_csv(rows));
    std::cout << ablation_summary_csv(rows);
    return kExitOk;
}

int run_verify(bool inject_sigmoid_fault) {
    testing::faults().flip_sigmoid_adjoint = inject_sigmoid_fault;
    const std::vector<CheckResult> results = run_verification_suites();
    bool all = true;
    std::printf("%-32s %-6s %8s  %s\n", "suite", "status", "seconds", "detail");
    for (const CheckResult& r : results) {
        all = all && r.pass;
        std::printf("%-32s %-6s %8.2f  %s\n", r.name.c_str(), r.pass ? "pass" : "FAIL", r.seconds,
                    r.detail.c_str());
    }
    std::printf("overall: %s\n", all ? "pass" : "FAIL");
    return all ? kExitOk : kExitVerification;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rtfd: bimodal fusion-decoupling segmentation workbench"};
    app.require_subcommand(1);

    // gen-data
    CorpusSpec spec;
    std::string gen_out;
    int gen_stages = 3;
    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic bimodal corpus");
    gen->add_option("--out", gen_out, "output corpus path")->required();
    gen->add_option("--train", spec.train_count, "training samples");
    gen->add_option("--test", spec.test_count, "test samples");
    gen->add_option("--height", spec.height, "image height");
    gen->add_option("--width", spec.width, "image width");
    gen->add_option("--classes", spec.num_classes, "class count (must be 4)");
    gen->add_option("--min-objects", spec.min_objects, "min objects per image");
    gen->add_option("--max-objects", spec.max_objects, "max objects per image");
    gen->add_option("--noise-sigma", spec.noise_sigma, "additive Gaussian pixel noise");
    gen->add_option("--seed", spec.seed, "generator seed");
    gen->add_option("--stages", gen_stages, "encoder depth the corpus must support");

    // train
    TrainCli traincli;
    std::string train_config_file;
    CLI::App* traincmd = app.add_subcommand("train", "train a three-branch model");
    add_train_flags(traincmd, traincli, true);
    traincmd->add_option("--config", train_config_file, "config echo to re-run");

    // eval
    std::string eval_bundle, eval_corpus, eval_condition = "rgbt", eval_out = ".", eval_config;
    bool eval_zero_fill = false;
    CLI::App* evalcmd = app.add_subcommand("eval", "evaluate a trained bundle");
    evalcmd->add_option("--bundle", eval_bundle, "bundle path")->required();
    evalcmd->add_option("--corpus", eval_corpus, "corpus path")->required();
    evalcmd->add_option("--condition", eval_condition, "rgbt, rgb, or t")
        ->check(CLI::IsMember({"rgbt", "rgb", "t"}));
    evalcmd->add_flag("--zero-fill", eval_zero_fill,
                      "serve the missing modality to the fused branch as zeros");
    std::string eval_split = "test";
    evalcmd->add_option("--split", eval_split, "corpus split to score")
        ->check(CLI::IsMember({"train", "test"}));
    evalcmd->add_option("--out", eval_out, "report directory");
    evalcmd->add_option("--config", eval_config,
                        "model config echo (default: sibling of the bundle)");

    // ablate
    TrainCli ablatecli;
    std::vector<std::string> ablate_variants{"baseline-add", "+SFF", "+CMDR", "+RDR", "full"};
    std::vector<std::uint64_t> ablate_seeds{0, 1, 2};
    int ablate_jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    std::string ablate_config_file;
    CLI::App* ablatecmd = app.add_subcommand("ablate", "train and score ablation variants");
    add_train_flags(ablatecmd, ablatecli, false);
    ablatecmd->add_option("--variants", ablate_variants, "variant names")->delimiter(',');
    ablatecmd->add_option("--seeds", ablate_seeds, "run seeds")->delimiter(',');
    ablatecmd->add_option("--jobs", ablate_jobs, "parallel training runs");
    ablatecmd->add_option("--config", ablate_config_file, "config echo to re-run");

    // verify
    bool inject_fault = false;
    CLI::App* verifycmd = app.add_subcommand("verify", "run the property suites");
    verifycmd
        ->add_flag("--inject-sigmoid-fault", inject_fault,
                   "flip the sigmoid adjoint sign (mutation sensitivity hook)")
        ->group("");  // hidden

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return run_gen_data(spec, gen_out, gen_stages);
        if (traincmd->parsed()) {
            if (!train_config_file.empty()) {
                merge_config_file(traincmd, train_config_file, traincli);
            }
            if (traincli.corpus.empty() || traincli.out.empty()) {
                std::cerr << "train: --corpus and --out are required (directly or via --config)\n";
                return kExitUsage;
            }
            return run_train(traincli);
        }
        if (evalcmd->parsed()) {
            return run_eval(eval_bundle, eval_corpus, eval_condition, eval_zero_fill, eval_split,
                            eval_out, eval_config);
        }
        if (ablatecmd->parsed()) {
            if (!ablate_config_file.empty()) {
                merge_config_file(ablatecmd, ablate_config_file, ablatecli);
            }
            if (ablatecli.corpus.empty() || ablatecli.out.empty()) {
                std::cerr << "ablate: --corpus and --out are required (directly or via --config)\n";
                return kExitUsage;
            }
            return run_ablate(ablatecli, ablate_variants, ablate_seeds, ablate_jobs);
        }
        if (verifycmd->parsed()) return run_verify(inject_fault);
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const IoError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const DomainError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const ShapeError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
