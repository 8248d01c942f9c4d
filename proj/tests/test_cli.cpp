#include "doctest.h"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "rtfd/data.hpp"

using namespace rtfd;
namespace fs = std::filesystem;

namespace {

const char* cli() { return RTFD_CLI_BIN; }

struct RunResult {
    int exit_code;
    std::string output;
};

RunResult run(const std::string& args) {
    const fs::path out = fs::temp_directory_path() / "rtfd_cli_out.txt";
    const std::string cmd = std::string(cli()) + " " + args + " > " + out.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream f(out);
    std::stringstream ss;
    ss << f.rdbuf();
    return {WEXITSTATUS(status), ss.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("rtfd_cli_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string operator/(const char* name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("gen-data: writes a loadable corpus, deterministically") {
    TempDir dir;
    const std::string corpus = dir / "c.bin";
    auto r1 = run("gen-data --out " + corpus + " --train 6 --test 2 --seed 4");
    CHECK(r1.exit_code == 0);
    Corpus loaded = load_corpus(corpus);
    CHECK(loaded.train.size() == 6);
    CHECK(fs::exists(corpus + ".spec.txt"));

    const std::string again = dir / "c2.bin";
    auto r2 = run("gen-data --out " + again + " --train 6 --test 2 --seed 4");
    CHECK(r2.exit_code == 0);
    CHECK(slurp(corpus) == slurp(again));
}

TEST_CASE("gen-data: indivisible extents fail validation before generation") {
    TempDir dir;
    const std::string corpus = dir / "c.bin";
    auto r = run("gen-data --out " + corpus + " --height 30");
    CHECK(r.exit_code == 1);
    CHECK_FALSE(fs::exists(corpus));
}

TEST_CASE("train: smoke run, reruns byte-identical, lambda zeroing") {
    TempDir dir;
    const std::string corpus = dir / "c.bin";
    REQUIRE(run("gen-data --out " + corpus + " --train 8 --test 2 --seed 1").exit_code == 0);

    const std::string base = "train --corpus " + corpus + " --epochs 2 --seed 5 --out ";
    CHECK(run(base + (dir / "r1")).exit_code == 0);
    CHECK(fs::exists(dir.path / "r1" / "bundle.rtfd"));
    CHECK(fs::exists(dir.path / "r1" / "config.echo.json"));

    CHECK(run(base + (dir / "r2")).exit_code == 0);
    CHECK(slurp(dir.path / "r1" / "epochs.csv") == slurp(dir.path / "r2" / "epochs.csv"));
    CHECK(slurp(dir.path / "r1" / "bundle.rtfd") == slurp(dir.path / "r2" / "bundle.rtfd"));

    CHECK(run("train --corpus " + corpus + " --epochs 1 --lambda-cmdr 0 --lambda-rdr 0 --out " +
              (dir / "r3"))
              .exit_code == 0);
    std::ifstream csv(dir.path / "r3" / "epochs.csv");
    std::string header, row;
    std::getline(csv, header);
    std::getline(csv, row);
    // l_cmdr and l_rdr columns (5th and 6th) must be zero
    std::stringstream ss(row);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    REQUIRE(fields.size() == 7);
    CHECK(fields[4] == "0");
    CHECK(fields[5] == "0");
}

TEST_CASE("train: missing corpus file exits with the data-error code") {
    TempDir dir;
    auto r = run("train --corpus " + (dir / "nope.bin") + " --out " + (dir / "r"));
    CHECK(r.exit_code == 2);
}

TEST_CASE("eval: unimodal condition reports only its parameter groups, reruns identical") {
    TempDir dir;
    const std::string corpus = dir / "c.bin";
    REQUIRE(run("gen-data --out " + corpus + " --train 8 --test 2 --seed 2").exit_code == 0);
    REQUIRE(run("train --corpus " + corpus + " --epochs 2 --out " + (dir / "run")).exit_code == 0);

    const std::string bundle = dir / "run/bundle.rtfd";
    auto r = run("eval --bundle " + bundle + " --corpus " + corpus +
                 " --condition rgb --out " + (dir / "e1"));
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("groups_used: rgb_encoder,rgb_decoder") != std::string::npos);
    const std::string report = slurp(dir.path / "e1" / "report-rgb.csv");
    CHECK(report.find("class,tp,fp,fn,iou,recall") == 0);

    auto r2 = run("eval --bundle " + bundle + " --corpus " + corpus +
                  " --condition rgb --out " + (dir / "e2"));
    CHECK(r2.exit_code == 0);
    CHECK(slurp(dir.path / "e1" / "report-rgb.csv") == slurp(dir.path / "e2" / "report-rgb.csv"));

    auto rgbt = run("eval --bundle " + bundle + " --corpus " + corpus +
                    " --condition rgbt --out " + (dir / "e3"));
    CHECK(rgbt.exit_code == 0);
    // 4 class rows plus the mean row
    const std::string rep = slurp(dir.path / "e3" / "report-rgbt.csv");
    int lines = 0;
    for (char c : rep) lines += c == '\n' ? 1 : 0;
    CHECK(lines == 6);
}

TEST_CASE("config echo round-trips into an identical run") {
    TempDir dir;
    const std::string corpus = dir / "c.bin";
    REQUIRE(run("gen-data --out " + corpus + " --train 8 --test 2 --seed 3").exit_code == 0);
    REQUIRE(run("train --corpus " + corpus + " --epochs 2 --seed 11 --lambda-cmdr 0.25 --out " +
                (dir / "a"))
                .exit_code == 0);
    REQUIRE(run("train --config " + (dir / "a/config.echo.json") + " --out " + (dir / "b"))
                .exit_code == 0);
    CHECK(slurp(dir.path / "a" / "epochs.csv") == slurp(dir.path / "b" / "epochs.csv"));
    CHECK(slurp(dir.path / "a" / "bundle.rtfd") == slurp(dir.path / "b" / "bundle.rtfd"));
}

TEST_CASE("ablate: tiny run emits deterministic tables") {
    TempDir dir;
    const std::string corpus = dir / "c.bin";
    REQUIRE(run("gen-data --out " + corpus + " --train 8 --test 2 --seed 6").exit_code == 0);
    const std::string args = "ablate --corpus " + corpus +
                             " --variants baseline-add,full --seeds 0 --epochs 1 --jobs 2 --out ";
    CHECK(run(args + (dir / "a1")).exit_code == 0);
    CHECK(run(args + (dir / "a2")).exit_code == 0);
    CHECK(slurp(dir.path / "a1" / "ablation.csv") == slurp(dir.path / "a2" / "ablation.csv"));
    const std::string csv = slurp(dir.path / "a1" / "ablation.csv");
    CHECK(csv.find("baseline-add,0,") != std::string::npos);
    CHECK(csv.find("full,0,") != std::string::npos);

    CHECK(run("ablate --corpus " + corpus + " --variants nonsense --out " + (dir / "a3"))
              .exit_code == 1);
}

TEST_CASE("verify: clean pass under budget, and the injected sigmoid fault trips it") {
    const auto start = std::chrono::steady_clock::now();
    auto ok = run("verify");
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    CHECK(ok.exit_code == 0);
    CHECK(ok.output.find("overall: pass") != std::string::npos);
    CHECK(seconds < 120.0);

    auto bad = run("verify --inject-sigmoid-fault");
    CHECK(bad.exit_code == 4);
    CHECK(bad.output.find("gradients/per-op") != std::string::npos);
    CHECK(bad.output.find("FAIL") != std::string::npos);
}

TEST_CASE("train: a diverging run aborts with the numeric exit code and checkpoint path") {
    TempDir dir;
    const std::string corpus = dir / "c.bin";
    REQUIRE(run("gen-data --out " + corpus + " --train 8 --test 2 --seed 9").exit_code == 0);
    auto r = run("train --corpus " + corpus +
                 " --epochs 12 --lr-decoder 1e8 --lr-encoder 1e8 --out " + (dir / "nan"));
    CHECK(r.exit_code == 3);
    CHECK(r.output.find("non-finite loss") != std::string::npos);
    CHECK(r.output.find("checkpoint.rtfd") != std::string::npos);
}
