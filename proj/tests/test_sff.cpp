#include "doctest.h"

#include <cmath>

#include "rtfd/gradcheck.hpp"
#include "rtfd/rng.hpp"
#include "rtfd/sff.hpp"

using namespace rtfd;

namespace {

Tensor random_leaf(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0,
                   bool requires_grad = true) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

ChannelDescriptor desc(Tensor t, DescriptorSource src) { return {std::move(t), src}; }

void fill(Tensor& t, double v) {
    for (auto& x : t.mutable_values()) x = v;
}

}  // namespace

TEST_CASE("descriptor: zero input with zero biases gives a zero descriptor") {
    Rng rng(1);
    FusionScaleParams p = make_fusion_scale(FusionKind::Sff, 8, rng);
    Tensor zeros = Tensor::zeros({8, 4, 4});
    ChannelDescriptor d = descriptor_of(zeros, DescriptorSource::Rgb, p);
    for (double v : d.values.values()) CHECK(v == 0.0);
}

TEST_CASE("descriptor: constant map collapses both pools to the constant") {
    Rng rng(2);
    FusionScaleParams p = make_fusion_scale(FusionKind::Sff, 4, rng);
    Tensor c = Tensor::full({4, 3, 3}, 0.7);
    // pooled vector entries are all 0.7 (GAP = GMP = c); check via an
    // identity MLP so the pooled value is exposed directly
    fill(p.rgb_mlp.b1, 0.0);
    fill(p.rgb_mlp.b2, 0.0);
    auto& w1 = p.rgb_mlp.w1.mutable_values();  // [4,4]
    auto& w2 = p.rgb_mlp.w2.mutable_values();
    for (int r = 0; r < 4; ++r) {
        for (int cc = 0; cc < 4; ++cc) {
            w1[static_cast<std::size_t>(r) * 4 + cc] = r == cc ? 1.0 : 0.0;
            w2[static_cast<std::size_t>(r) * 4 + cc] = r == cc ? 1.0 : 0.0;
        }
    }
    ChannelDescriptor d = descriptor_of(c, DescriptorSource::Rgb, p);
    for (double v : d.values.values()) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("descriptor: identity MLP reproduces 0.5*(GAP+GMP) against a pooling oracle") {
    Rng rng(3);
    FusionScaleParams p = make_fusion_scale(FusionKind::Sff, 4, rng);
    fill(p.t_mlp.b1, 0.0);
    fill(p.t_mlp.b2, 0.0);
    auto& w1 = p.t_mlp.w1.mutable_values();
    auto& w2 = p.t_mlp.w2.mutable_values();
    for (int r = 0; r < 4; ++r) {
        for (int cc = 0; cc < 4; ++cc) {
            w1[static_cast<std::size_t>(r) * 4 + cc] = r == cc ? 1.0 : 0.0;
            w2[static_cast<std::size_t>(r) * 4 + cc] = r == cc ? 1.0 : 0.0;
        }
    }
    Tensor f = random_leaf(rng, {4, 3, 5}, 0.05, 1.0, false);  // positive: relu transparent
    ChannelDescriptor d = descriptor_of(f, DescriptorSource::Thermal, p);
    const std::size_t hw = 15;
    for (int c = 0; c < 4; ++c) {
        double avg = 0.0, mx = f.values()[static_cast<std::size_t>(c) * hw];
        for (std::size_t i = 0; i < hw; ++i) {
            const double v = f.values()[static_cast<std::size_t>(c) * hw + i];
            avg += v;
            mx = std::max(mx, v);
        }
        avg /= static_cast<double>(hw);
        CHECK(d.values.values()[static_cast<std::size_t>(c)] ==
              doctest::Approx(0.5 * (avg + mx)).epsilon(1e-12));
    }
}

TEST_CASE("exchange gate: spec reference values") {
    // product 0 -> 0.5; R=+1,T=-1 -> 1 - sigmoid(-1); R=T=+3 -> 1 - sigmoid(9)
    Tensor r({3}, {0.0, 1.0, 3.0});
    Tensor t({3}, {0.7, -1.0, 3.0});
    Tensor gate = exchange_gate(desc(r, DescriptorSource::Rgb), desc(t, DescriptorSource::Thermal));
    CHECK(gate.values()[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(gate.values()[1] == doctest::Approx(0.7310585786300049).epsilon(1e-12));
    CHECK(gate.values()[2] == doctest::Approx(1.2339457598623172e-4).epsilon(1e-9));
}

TEST_CASE("exchange gate: shared between directions, monotone in the product") {
    Rng rng(5);
    Tensor rv = random_leaf(rng, {6}, -3.0, 3.0, false);
    Tensor tv = random_leaf(rng, {6}, -3.0, 3.0, false);
    ChannelDescriptor r = desc(rv, DescriptorSource::Rgb);
    ChannelDescriptor t = desc(tv, DescriptorSource::Thermal);

    Tensor f_rgb = random_leaf(rng, {6, 2, 2}, -1.0, 1.0, false);
    Tensor f_t = random_leaf(rng, {6, 2, 2}, -1.0, 1.0, false);
    auto [gr, gt] = gated_exchange(f_rgb, f_t, r, t);
    Tensor gate = exchange_gate(r, t);
    // applying the gate by hand reproduces both directions
    const std::size_t hw = 4;
    for (int c = 0; c < 6; ++c) {
        for (std::size_t i = 0; i < hw; ++i) {
            const std::size_t u = static_cast<std::size_t>(c) * hw + i;
            CHECK(gr.values()[u] ==
                  f_rgb.values()[u] + gate.values()[static_cast<std::size_t>(c)] * f_t.values()[u]);
            CHECK(gt.values()[u] ==
                  f_t.values()[u] + gate.values()[static_cast<std::size_t>(c)] * f_rgb.values()[u]);
        }
    }
    // sign law: gate > 0.5 iff product < 0, strictly decreasing in the product
    for (int c = 0; c < 6; ++c) {
        const double prod =
            rv.values()[static_cast<std::size_t>(c)] * tv.values()[static_cast<std::size_t>(c)];
        const double g = gate.values()[static_cast<std::size_t>(c)];
        if (prod < 0) CHECK(g > 0.5);
        if (prod > 0) CHECK(g < 0.5);
    }
    std::vector<std::pair<double, double>> pts;
    for (int c = 0; c < 6; ++c) {
        pts.emplace_back(
            rv.values()[static_cast<std::size_t>(c)] * tv.values()[static_cast<std::size_t>(c)],
            gate.values()[static_cast<std::size_t>(c)]);
    }
    std::sort(pts.begin(), pts.end());
    for (std::size_t i = 1; i < pts.size(); ++i) CHECK(pts[i].second < pts[i - 1].second);
}

TEST_CASE("merge attention: uniform conv output is the identity") {
    Rng rng(7);
    FusionScaleParams p = make_fusion_scale(FusionKind::Sff, 4, rng);
    fill(p.merge.w, 0.0);
    fill(p.merge.b, 0.3);  // constant over space per channel
    Tensor a = random_leaf(rng, {4, 2, 2}, -1.0, 1.0, false);
    Tensor b = random_leaf(rng, {4, 2, 2}, -1.0, 1.0, false);
    auto [ma, mb] = merge_attention(a, b, p);
    for (std::size_t i = 0; i < a.numel(); ++i) {
        CHECK(ma.values()[i] == doctest::Approx(a.values()[i]).epsilon(1e-14));
        CHECK(mb.values()[i] == doctest::Approx(b.values()[i]).epsilon(1e-14));
    }
}

TEST_CASE("merge attention: scaled maps sum to H*W per channel") {
    Rng rng(8);
    FusionScaleParams p = make_fusion_scale(FusionKind::Sff, 4, rng);
    Tensor a = random_leaf(rng, {4, 3, 5}, -1.0, 1.0, false);
    Tensor b = random_leaf(rng, {4, 3, 5}, -1.0, 1.0, false);
    // recover the attention maps by dividing out the inputs is fragile; check
    // the invariant through the construction instead
    Tensor mixed = conv1x1(concat_channels(a, b), p.merge);
    for (int half = 0; half < 2; ++half) {
        Tensor att = scalar_mul(softmax_spatial(slice_channels(mixed, half * 4, half * 4 + 4)),
                                15.0);
        for (int c = 0; c < 4; ++c) {
            double s = 0.0;
            for (int i = 0; i < 15; ++i) s += att.values()[static_cast<std::size_t>(c) * 15 + i];
            CHECK(std::fabs(s - 15.0) <= 1e-10);
        }
    }
}

TEST_CASE("1x1 conv equals a per-pixel matrix-vector oracle") {
    Rng rng(9);
    Conv1x1 conv = make_conv1x1(3, 5, rng);
    Tensor x = random_leaf(rng, {3, 2, 2}, -1.0, 1.0, false);
    Tensor y = conv1x1(x, conv);
    for (int o = 0; o < 5; ++o) {
        for (int px = 0; px < 4; ++px) {
            double want = conv.b.values()[static_cast<std::size_t>(o)];
            for (int i = 0; i < 3; ++i) {
                want += conv.w.values()[static_cast<std::size_t>(o) * 3 + i] *
                        x.values()[static_cast<std::size_t>(i) * 4 + px];
            }
            CHECK(y.values()[static_cast<std::size_t>(o) * 4 + px] ==
                  doctest::Approx(want).epsilon(1e-12));
        }
    }
}

TEST_CASE("fuse: additive identity, commutativity, sum oracle") {
    Rng rng(10);
    Tensor a = random_leaf(rng, {2, 2, 2}, -1.0, 1.0, false);
    Tensor z = Tensor::zeros({2, 2, 2});
    CHECK(fuse(a, z).values() == a.values());
    Tensor b = random_leaf(rng, {2, 2, 2}, -1.0, 1.0, false);
    CHECK(fuse(a, b).values() == fuse(b, a).values());
    Tensor s = fuse(a, b);
    for (std::size_t i = 0; i < s.numel(); ++i) {
        CHECK(s.values()[i] == a.values()[i] + b.values()[i]);
    }
    CHECK_THROWS_AS(fuse(a, Tensor::zeros({2, 2, 4})), ShapeError);
}

TEST_CASE("sff_forward: zero inputs with zero biases fuse to zero") {
    Rng rng(11);
    FusionScaleParams p = make_fusion_scale(FusionKind::Sff, 8, rng);
    Tensor z3 = Tensor::zeros({8, 4, 4});
    FusionOutput out = sff_forward(z3, z3, p);
    for (double v : out.f_fuse.values()) CHECK(v == 0.0);
    CHECK(out.f_fuse.shape() == Shape{8, 4, 4});
}

TEST_CASE("sff_forward gradients w.r.t. every parameter match finite differences") {
    Rng rng(12);
    FusionScaleParams p = make_fusion_scale(FusionKind::Sff, 4, rng);
    Tensor f_rgb = random_leaf(rng, {4, 2, 2}, -1.0, 1.0, true);
    Tensor f_t = random_leaf(rng, {4, 2, 2}, -1.0, 1.0, true);
    std::vector<Tensor> leaves = {f_rgb,       f_t,         p.rgb_mlp.w1, p.rgb_mlp.b1,
                                  p.rgb_mlp.w2, p.rgb_mlp.b2, p.t_mlp.w1,  p.t_mlp.b1,
                                  p.t_mlp.w2,  p.t_mlp.b2,  p.merge.w,   p.merge.b};
    auto res = check_gradients([&] { return sum(sff_forward(f_rgb, f_t, p).f_fuse); }, leaves,
                               GradCheckOptions{1e-5, 1e-5, 1e-9});
    CHECK_MESSAGE(res.ok, res.detail);
}

TEST_CASE("swapping modalities and parameter blocks permutes outputs, fuse unchanged") {
    Rng rng(13);
    const int c = 4;
    FusionScaleParams p = make_fusion_scale(FusionKind::Sff, c, rng);
    Tensor f_rgb = random_leaf(rng, {c, 2, 2}, -1.0, 1.0, false);
    Tensor f_t = random_leaf(rng, {c, 2, 2}, -1.0, 1.0, false);
    FusionOutput base = sff_forward(f_rgb, f_t, p);

    FusionScaleParams q = make_fusion_scale(FusionKind::Sff, c, rng);
    q.rgb_mlp = p.t_mlp;
    q.t_mlp = p.rgb_mlp;
    q.fused_mlp = p.fused_mlp;
    // merge conv is [2C,2C]; swap the first/second C blocks of rows and cols
    auto swap_idx = [c](int k) { return (k + c) % (2 * c); };
    auto& qw = q.merge.w.mutable_values();
    auto& qb = q.merge.b.mutable_values();
    for (int o = 0; o < 2 * c; ++o) {
        qb[static_cast<std::size_t>(o)] =
            p.merge.b.values()[static_cast<std::size_t>(swap_idx(o))];
        for (int i = 0; i < 2 * c; ++i) {
            qw[static_cast<std::size_t>(o) * 2 * c + i] =
                p.merge.w.values()[static_cast<std::size_t>(swap_idx(o)) * 2 * c + swap_idx(i)];
        }
    }
    FusionOutput swapped = sff_forward(f_t, f_rgb, q);
    for (std::size_t i = 0; i < base.f_fuse.numel(); ++i) {
        CHECK(swapped.f_fuse.values()[i] ==
              doctest::Approx(base.f_fuse.values()[i]).epsilon(1e-12));
    }
}

TEST_CASE("addition-projection fusion still exposes both descriptors") {
    Rng rng(14);
    FusionScaleParams p = make_fusion_scale(FusionKind::AdditionProjection, 4, rng);
    Tensor f_rgb = random_leaf(rng, {4, 2, 2}, -1.0, 1.0, false);
    Tensor f_t = random_leaf(rng, {4, 2, 2}, -1.0, 1.0, false);
    FusionOutput out = fusion_forward(f_rgb, f_t, p);
    CHECK(out.f_fuse.shape() == Shape{4, 2, 2});
    CHECK(out.r.channels() == 4);
    CHECK(out.t.channels() == 4);
    // equals proj(f_rgb) + proj(f_t)
    Tensor want = add(conv1x1(f_rgb, p.proj_rgb), conv1x1(f_t, p.proj_t));
    CHECK(out.f_fuse.values() == want.values());
}

TEST_CASE("channel mismatches are rejected with a diagnostic") {
    Rng rng(15);
    FusionScaleParams p = make_fusion_scale(FusionKind::Sff, 4, rng);
    Tensor wrong = Tensor::zeros({6, 2, 2});
    CHECK_THROWS_AS(descriptor_of(wrong, DescriptorSource::Rgb, p), ShapeError);
    Tensor ok = Tensor::zeros({4, 2, 2});
    CHECK_THROWS_AS(sff_forward(ok, wrong, p), ShapeError);
}
