#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "rtfd/model.hpp"
#include "rtfd/rng.hpp"

using namespace rtfd;
namespace fs = std::filesystem;

namespace {

Tensor random_image(Rng& rng, Shape shape) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(0.0, 1.0);
    return Tensor(std::move(shape), std::move(v));
}

fs::path temp_file(const char* tag) {
    return fs::temp_directory_path() /
           (std::string("rtfd_test_") + tag + "_" + std::to_string(::getpid()) + ".rtfd");
}

void fill_values(Tensor t, double v) {
    for (auto& x : t.mutable_values()) x = v;
}

}  // namespace

TEST_CASE("config validation") {
    NetworkConfig one_stage;
    one_stage.widths = {8};
    CHECK_THROWS_AS(init_params(one_stage), ShapeError);

    NetworkConfig thin;
    thin.widths = {8, 2};
    CHECK_THROWS_AS(init_params(thin), ShapeError);

    NetworkConfig binary;
    binary.num_classes = 1;
    CHECK_THROWS_AS(init_params(binary), ShapeError);
}

TEST_CASE("forward_full: output shapes and per-pixel normalization") {
    NetworkConfig cfg;
    cfg.seed = 3;
    ModelParams params = init_params(cfg);
    Rng rng(42);
    Tensor rgb = random_image(rng, {3, 16, 16});
    Tensor t = random_image(rng, {1, 16, 16});
    BranchOutputs out = forward_full(params, rgb, t);

    for (const Tensor* p : {&out.p_rgb, &out.p_fuse, &out.p_t}) {
        CHECK(p->shape() == Shape{4, 16, 16});
        for (int px = 0; px < 256; ++px) {
            double s = 0.0;
            for (int c = 0; c < 4; ++c) s += p->values()[static_cast<std::size_t>(c) * 256 + px];
            CHECK(std::fabs(s - 1.0) <= 1e-6);
        }
    }
    CHECK(out.dec_fuse.size() == 2);
    CHECK(out.dec_fuse[0].shape() == Shape{16, 4, 4});
    CHECK(out.dec_fuse[1].shape() == Shape{8, 8, 8});
    CHECK(out.fuse_maps.size() == 3);

    // divisibility violations are rejected before any work
    CHECK_THROWS_AS(forward_full(params, random_image(rng, {3, 12, 16}),
                                 random_image(rng, {1, 12, 16})),
                    ShapeError);
    CHECK_THROWS_AS(forward_full(params, rgb, random_image(rng, {1, 32, 32})), ShapeError);
}

TEST_CASE("saturated exchange gates plus neutral attention degenerate to additive fusion") {
    NetworkConfig cfg;
    cfg.seed = 5;
    ModelParams params = init_params(cfg);
    // descriptor MLPs forced to emit +100 on every channel: the gate
    // 1-sigmoid(1e4) underflows to exactly 0; zero merge conv makes the
    // spatial attention exactly neutral.
    for (FusionScaleParams& f : params.fusion) {
        for (DescriptorMlp* mlp : {&f.rgb_mlp, &f.t_mlp}) {
            fill_values(mlp->w1, 0.0);
            fill_values(mlp->b1, 0.0);
            fill_values(mlp->w2, 0.0);
            fill_values(mlp->b2, 100.0);
        }
        fill_values(f.merge.w, 0.0);
        fill_values(f.merge.b, 0.0);
    }
    Rng rng(7);
    Tensor rgb = random_image(rng, {3, 16, 16});
    Tensor t = random_image(rng, {1, 16, 16});
    BranchOutputs out = forward_full(params, rgb, t);
    for (std::size_t s = 0; s < out.fuse_maps.size(); ++s) {
        const auto& fused = out.fuse_maps[s].values();
        const auto& er = out.enc_rgb[s].values();
        const auto& et = out.enc_t[s].values();
        REQUIRE(fused.size() == er.size());
        for (std::size_t i = 0; i < fused.size(); ++i) CHECK(fused[i] == er[i] + et[i]);
    }
}

TEST_CASE("forward_unimodal is bit-identical to the matching forward_full branch") {
    NetworkConfig cfg;
    cfg.seed = 11;
    ModelParams params = init_params(cfg);
    Rng rng(91);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor rgb = random_image(rng, {3, 16, 16});
        Tensor t = random_image(rng, {1, 16, 16});
        BranchOutputs out = forward_full(params, rgb, t);
        Tensor u_rgb = forward_unimodal(params.rgb_encoder, params.rgb_decoder, rgb);
        Tensor u_t = forward_unimodal(params.t_encoder, params.t_decoder, t);
        CHECK(u_rgb.values() == out.p_rgb.values());
        CHECK(u_t.values() == out.p_t.values());
    }
}

TEST_CASE("bundle round-trip is bit-exact") {
    NetworkConfig cfg;
    cfg.seed = 13;
    ModelParams params = init_params(cfg);
    const fs::path path = temp_file("roundtrip");
    save_bundle(path.string(), params);

    NetworkConfig other = cfg;
    other.seed = 14;
    ModelParams loaded = init_params(other);
    const auto groups = load_bundle(path.string(), loaded);
    CHECK(groups.size() == 6);

    const auto a = all_parameters(params);
    const auto b = all_parameters(loaded);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].tensor.values() == b[i].tensor.values());
    }
    fs::remove(path);
}

TEST_CASE("partial load: thermal groups alone run thermal inference") {
    NetworkConfig cfg;
    cfg.seed = 17;
    ModelParams params = init_params(cfg);
    const fs::path path = temp_file("partial");
    save_bundle(path.string(), params);

    NetworkConfig other = cfg;
    other.seed = 18;
    ModelParams partial = init_params(other);
    const auto groups = load_bundle(path.string(), partial, {"t_encoder", "t_decoder"});
    CHECK(groups == std::vector<std::string>{"t_encoder", "t_decoder"});

    Rng rng(19);
    Tensor t = random_image(rng, {1, 16, 16});
    Tensor from_partial = forward_unimodal(partial.t_encoder, partial.t_decoder, t);
    Tensor from_source = forward_unimodal(params.t_encoder, params.t_decoder, t);
    CHECK(from_partial.values() == from_source.values());
    fs::remove(path);
}

TEST_CASE("bundle errors: corruption, unknown group, bad magic") {
    NetworkConfig cfg;
    cfg.seed = 23;
    ModelParams params = init_params(cfg);
    const fs::path path = temp_file("corrupt");
    save_bundle(path.string(), params);

    CHECK_THROWS_AS(load_bundle(path.string(), params, {"thermal_decoder"}), IoError);

    // flip one payload byte: the checksum must catch it
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(64);
        char byte;
        f.seekg(64);
        f.read(&byte, 1);
        byte = static_cast<char>(byte ^ 0x40);
        f.seekp(64);
        f.write(&byte, 1);
    }
    CHECK_THROWS_AS(load_bundle(path.string(), params), IoError);
    fs::remove(path);

    const fs::path bogus = temp_file("bogus");
    std::ofstream(bogus) << "not a bundle at all, definitely";
    CHECK_THROWS_AS(load_bundle(bogus.string(), params), IoError);
    fs::remove(bogus);
}

TEST_CASE("parameter groups are disjoint and named") {
    NetworkConfig cfg;
    ModelParams params = init_params(cfg);
    const auto all = all_parameters(params);
    int counts[6] = {0, 0, 0, 0, 0, 0};
    for (const NamedParam& np : all) {
        ++counts[static_cast<int>(np.group)];
        CHECK(np.tensor.requires_grad());
    }
    for (int c : counts) CHECK(c > 0);

    ParamGroup g;
    CHECK(parse_param_group("fused_decoder", &g));
    CHECK(g == ParamGroup::FusedDecoder);
    CHECK_FALSE(parse_param_group("fused-decoder", &g));
}
