#include "doctest.h"

#include <cmath>
#include <vector>

#include "rtfd/gradcheck.hpp"
#include "rtfd/rng.hpp"
#include "rtfd/tensor.hpp"

using namespace rtfd;

namespace {

Tensor random_leaf(Rng& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v), true);
}

// Pushes values away from relu/max kinks so central differences stay valid.
void nudge_from_zero(Tensor& t, double margin = 1e-3) {
    for (auto& v : t.mutable_values()) {
        if (std::fabs(v) < margin) v = v < 0 ? -margin : margin;
    }
}

Shape random_small_shape(Rng& rng) {
    const int nd = rng.uniform_int(1, 3);
    Shape s;
    for (int i = 0; i < nd; ++i) s.push_back(rng.uniform_int(1, 6));
    return s;
}

}  // namespace

TEST_CASE("tensor construction enforces shape/data agreement") {
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), ShapeError);
    CHECK_THROWS_AS(Tensor({0}, {}), ShapeError);
    Tensor t({2, 2}, {1, 2, 3, 4});
    CHECK(t.numel() == 4);
    CHECK(t.ndim() == 2);
}

TEST_CASE("add: [1,2] + [3,4] = [4,6]") {
    Tensor a({2}, {1, 2});
    Tensor b({2}, {3, 4});
    Tensor c = add(a, b);
    CHECK(c.values() == std::vector<double>{4, 6});
    CHECK_THROWS_AS(add(Tensor({2}, {1, 2}), Tensor({3}, {1, 2, 3})), ShapeError);
}

TEST_CASE("mul broadcasts a [C] vector against a [C,1,1] map") {
    Tensor vec({2}, {3.0, 5.0});
    Tensor map = Tensor::ones({2, 1, 1});
    Tensor out = mul(vec, map);
    CHECK(out.shape() == Shape{2, 1, 1});
    CHECK(out.values() == std::vector<double>{3.0, 5.0});
}

TEST_CASE("broadcasting [C] against [C,H,W] equals materialized tiling") {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const int c = rng.uniform_int(1, 4), h = rng.uniform_int(1, 4), w = rng.uniform_int(1, 4);
        Tensor vec = random_leaf(rng, {c});
        Tensor map = random_leaf(rng, {c, h, w});
        Tensor brd = mul(vec, map);
        // brute-force expansion
        std::vector<double> tiled(static_cast<std::size_t>(c) * h * w);
        for (int ch = 0; ch < c; ++ch) {
            for (int p = 0; p < h * w; ++p) {
                tiled[static_cast<std::size_t>(ch) * h * w + p] = vec.values()[ch];
            }
        }
        Tensor expanded({c, h, w}, std::move(tiled));
        Tensor ref = mul(expanded, map);
        REQUIRE(brd.numel() == ref.numel());
        for (std::size_t i = 0; i < brd.numel(); ++i) CHECK(brd.values()[i] == ref.values()[i]);
    }
}

TEST_CASE("gradient of sum(a*b) w.r.t. a equals b (finite differences)") {
    Rng rng(11);
    Tensor a = random_leaf(rng, {3, 2});
    Tensor b = random_leaf(rng, {3, 2});
    auto build = [&] { return sum(mul(a, b)); };
    auto res = check_gradients(build, {a, b});
    CHECK_MESSAGE(res.ok, res.detail);
    a.zero_grad();
    b.zero_grad();
    backward(build());
    for (std::size_t i = 0; i < a.numel(); ++i) {
        CHECK((*a.grad())[i] == doctest::Approx(b.values()[i]).epsilon(1e-12));
    }
}

TEST_CASE("matmul identity, hand product, and gradients") {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor x({2, 2}, {5, 6, 7, 8});
    CHECK(matmul(eye, x).values() == x.values());

    Tensor a({1, 2}, {1, 2});
    Tensor b({2, 1}, {3, 4});
    CHECK(matmul(a, b).values() == std::vector<double>{11});

    CHECK_THROWS_AS(matmul(Tensor({2, 3}, std::vector<double>(6)), Tensor({2, 3}, std::vector<double>(6))),
                    ShapeError);

    Rng rng(5);
    Tensor m = random_leaf(rng, {3, 4});
    Tensor n = random_leaf(rng, {4, 2});
    auto res = check_gradients([&] { return sum(matmul(m, n)); }, {m, n});
    CHECK_MESSAGE(res.ok, res.detail);
}

TEST_CASE("sigmoid values and relu behavior") {
    Tensor x({3}, {0.0, -1.0, -3.0});
    Tensor s = sigmoid(x);
    CHECK(s.values()[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s.values()[1] == doctest::Approx(0.2689414213699951).epsilon(1e-12));

    Tensor r = relu(x);
    CHECK(r.values()[2] == 0.0);
    Tensor xr({1}, {-3.0}, true);
    Tensor loss = sum(relu(xr));
    backward(loss);
    CHECK((*xr.grad())[0] == 0.0);
}

TEST_CASE("log rejects non-positive input naming the offending index") {
    Tensor x({3}, {1.0, 0.0, 2.0});
    CHECK_THROWS_WITH_AS(log(x), doctest::Contains("index 1"), DomainError);
}

TEST_CASE("softmax: symmetry, stabilization, and reference values") {
    Tensor a({3}, {0, 0, 0});
    Tensor sa = softmax(a, 0);
    for (double v : sa.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));

    Tensor big({2}, {1000, 1000});
    Tensor sb = softmax(big, 0);
    CHECK(sb.values()[0] == 0.5);
    CHECK(sb.values()[1] == 0.5);

    Tensor x({3}, {1, 2, 3});
    Tensor s = softmax(x, 0);
    CHECK(s.values()[0] == doctest::Approx(0.09003057317038046).epsilon(1e-10));
    CHECK(s.values()[1] == doctest::Approx(0.24472847105479767).epsilon(1e-10));
    CHECK(s.values()[2] == doctest::Approx(0.6652409557748219).epsilon(1e-10));

    CHECK_THROWS_AS(softmax(x, 1), ShapeError);
}

TEST_CASE("softmax sums to one within 1e-12 even for magnitude-1e3 entries") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const int c = rng.uniform_int(2, 5), h = rng.uniform_int(1, 4), w = rng.uniform_int(1, 4);
        Tensor x = random_leaf(rng, {c, h, w}, -1000.0, 1000.0);
        Tensor s = softmax(x, 0);
        const std::size_t hw = static_cast<std::size_t>(h) * w;
        for (std::size_t p = 0; p < hw; ++p) {
            double total = 0;
            for (int ch = 0; ch < c; ++ch) total += s.values()[ch * hw + p];
            CHECK(std::fabs(total - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("global pools: constants, hand values, max-pool routing") {
    Tensor c7 = Tensor::full({2, 2, 2}, 7.0);
    CHECK(global_avg_pool(c7).values() == std::vector<double>{7, 7});
    CHECK(global_max_pool(c7).values() == std::vector<double>{7, 7});

    Tensor ch({1, 2, 2}, {1, 2, 3, 4});
    CHECK(global_avg_pool(ch).values() == std::vector<double>{2.5});
    CHECK(global_max_pool(ch).values() == std::vector<double>{4});

    // gradient mass lands on the first argmax entry
    Tensor x({1, 2, 2}, {1, 5, 5, 2}, true);
    backward(sum(global_max_pool(x)));
    CHECK(*x.grad() == std::vector<double>{0, 1, 0, 0});
}

TEST_CASE("concat/slice round-trip and gradient split") {
    Tensor a({1, 2, 2}, {1, 2, 3, 4}, true);
    Tensor b({1, 2, 2}, {5, 6, 7, 8}, true);
    Tensor cat = concat_channels(a, b);
    CHECK(cat.shape() == Shape{2, 2, 2});
    CHECK(slice_channels(cat, 0, 1).values() == a.values());

    CHECK_THROWS_AS(concat_channels(a, Tensor({1, 3, 2}, std::vector<double>(6))), ShapeError);

    auto res = check_gradients(
        [&] { return sum(mul(concat_channels(a, b), concat_channels(b, a))); }, {a, b});
    CHECK_MESSAGE(res.ok, res.detail);
}

TEST_CASE("stop_gradient is value-transparent and gradient-opaque") {
    Rng rng(13);
    Tensor x = random_leaf(rng, {2, 3});
    Tensor y = random_leaf(rng, {2, 3});

    Tensor sgx = stop_gradient(x);
    CHECK(sgx.values() == x.values());
    CHECK_FALSE(sgx.requires_grad());

    // loss = sum(sg(x) * y): grad(y) = x, grad(x) untouched
    x.zero_grad();
    y.zero_grad();
    backward(sum(mul(stop_gradient(x), y)));
    REQUIRE(y.grad() != nullptr);
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK((*y.grad())[i] == x.values()[i]);
    CHECK(x.grad() == nullptr);

    // replacing a node by sg(node) changes no forward value
    Tensor direct = mul(add(x, y), y);
    Tensor gated = mul(stop_gradient(add(x, y)), y);
    CHECK(direct.values() == gated.values());
}

TEST_CASE("backward: linearity, accumulation, and composite graphs") {
    Tensor x({3}, {1, 2, 3}, true);
    backward(sum(x));
    CHECK(*x.grad() == std::vector<double>{1, 1, 1});

    // repeated calls accumulate
    backward(sum(x));
    CHECK(*x.grad() == std::vector<double>{2, 2, 2});

    x.zero_grad();
    backward(sum(mul(x, x)));
    CHECK(*x.grad() == std::vector<double>{2, 4, 6});

    // diamond graph: z = y*y with y = x+x -> dz/dx = 8x
    x.zero_grad();
    Tensor y = add(x, x);
    backward(sum(mul(y, y)));
    CHECK(*x.grad() == std::vector<double>{8, 16, 24});

    CHECK_THROWS_AS(backward(x), ShapeError);
}

TEST_CASE("random 5-op composite graphs match finite differences") {
    Rng rng(41);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor a = random_leaf(rng, {3, 3});
        Tensor b = random_leaf(rng, {3, 3});
        Tensor c = random_leaf(rng, {3, 3});
        auto build = [&] {
            Tensor t1 = matmul(a, b);
            Tensor t2 = sigmoid(t1);
            Tensor t3 = mul(t2, c);
            Tensor t4 = add(t3, b);
            return mean(t4);
        };
        auto res = check_gradients(build, {a, b, c});
        CHECK_MESSAGE(res.ok, res.detail);
    }
}

TEST_CASE("per-op finite-difference sweep on random small inputs") {
    Rng rng(101);
    int checked = 0;
    for (int trial = 0; trial < 20; ++trial) {
        Shape s3{rng.uniform_int(1, 4), rng.uniform_int(1, 5), rng.uniform_int(1, 5)};
        Tensor x = random_leaf(rng, s3);
        Tensor y = random_leaf(rng, s3);
        nudge_from_zero(x);

        auto check = [&](const std::function<Tensor()>& f) {
            auto res = check_gradients(f, {x, y});
            CHECK_MESSAGE(res.ok, res.detail);
            ++checked;
        };
        check([&] { return sum(add(x, y)); });
        check([&] { return sum(sub(x, y)); });
        check([&] { return mean(mul(x, y)); });
        check([&] { return sum(scalar_mul(x, -1.3)); });
        check([&] { return sum(sigmoid(x)); });
        check([&] { return sum(relu(x)); });
        check([&] { return sum(exp(scalar_mul(x, 0.5))); });
        check([&] { return sum(abs(x)); });
        check([&] { return sum(mul(softmax(x, 0), y)); });
        check([&] { return sum(mul(softmax_spatial(x), y)); });
        check([&] { return sum(mul(global_avg_pool(x), global_avg_pool(y))); });
        check([&] { return sum(upsample_nearest2(x)); });
        check([&] { return mean(mul(im2col3x3(x, 1), im2col3x3(y, 1))); });
        check([&] { return sum(im2col3x3(x, 2)); });

        // log on strictly positive input
        Tensor pos = random_leaf(rng, random_small_shape(rng), 0.2, 3.0);
        auto resl = check_gradients([&] { return sum(log(pos)); }, {pos});
        CHECK_MESSAGE(resl.ok, resl.detail);

        // max pool away from ties
        auto resm = check_gradients([&] { return sum(global_max_pool(x)); }, {x},
                                    GradCheckOptions{1e-5, 1e-4, 1e-9});
        CHECK_MESSAGE(resm.ok, resm.detail);
    }
    CHECK(checked >= 20 * 14);
}

TEST_CASE("transpose/reshape adjoints") {
    Rng rng(55);
    Tensor x = random_leaf(rng, {3, 4});
    Tensor y = random_leaf(rng, {4, 3});
    auto res = check_gradients([&] { return sum(mul(transpose(x), y)); }, {x, y});
    CHECK_MESSAGE(res.ok, res.detail);
    auto res2 = check_gradients([&] { return sum(mul(reshape(x, {2, 6}), reshape(y, {2, 6}))); },
                                {x, y});
    CHECK_MESSAGE(res2.ok, res2.detail);
}

TEST_CASE("select_class gathers label entries and rejects bad labels") {
    Tensor p({2, 1, 2}, {0.1, 0.2, 0.9, 0.8}, true);
    Tensor sel = select_class(p, {1, 0});
    CHECK(sel.values() == std::vector<double>{0.9, 0.2});
    CHECK_THROWS_AS(select_class(p, {2, 0}), DomainError);
    auto res = check_gradients([&] { return sum(select_class(p, {1, 0})); }, {p});
    CHECK_MESSAGE(res.ok, res.detail);
}

TEST_CASE("no-grad mode skips graph construction") {
    Tensor x({2}, {1, 2}, true);
    {
        autograd::NoGradGuard guard;
        Tensor y = mul(x, x);
        CHECK_FALSE(y.requires_grad());
    }
    Tensor z = mul(x, x);
    CHECK(z.requires_grad());
}
