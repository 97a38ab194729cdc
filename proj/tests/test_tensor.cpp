// Tensor core: RNG streams, autodiff bookkeeping, elementwise ops, conv3d,
// instance norm, resampling, concat. Numeric claims are checked against the
// independent references in oracles.hpp.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "lact/gradcheck.hpp"
#include "lact/ops.hpp"
#include "lact/rng.hpp"
#include "lact/tensor.hpp"
#include "oracles.hpp"

using namespace lact;
using Catch::Matchers::ContainsSubstring;

namespace {

Tensor<double> rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                           bool grad = true) {
    Tensor<double> t = Tensor<double>::zeros(std::move(shape));
    for (auto& v : t.values()) v = rng.uniform(lo, hi);
    if (grad) t.set_requires_grad(true);
    return t;
}

}  // namespace

TEST_CASE("rng streams are deterministic and well distributed") {
    SECTION("same seed, same stream") {
        Rng a(42), b(42);
        for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
        for (int i = 0; i < 100; ++i) REQUIRE(a.normal() == b.normal());
    }
    SECTION("different seeds diverge") {
        Rng a(1), b(2);
        int same = 0;
        for (int i = 0; i < 64; ++i) same += a.next_u64() == b.next_u64();
        REQUIRE(same == 0);
    }
    SECTION("uniform values live in [0, 1) with a sane mean") {
        Rng r(7);
        double sum = 0.0;
        for (int i = 0; i < 20000; ++i) {
            const double u = r.uniform();
            REQUIRE(u >= 0.0);
            REQUIRE(u < 1.0);
            sum += u;
        }
        REQUIRE(std::abs(sum / 20000 - 0.5) < 0.01);
    }
    SECTION("normal matches standard moments loosely") {
        Rng r(11);
        std::vector<double> xs(20000);
        for (auto& x : xs) x = r.normal();
        const auto mv = oracle::two_pass_stats(xs.data(), static_cast<int64_t>(xs.size()));
        REQUIRE(std::abs(mv.mean) < 0.03);
        REQUIRE(std::abs(mv.var - 1.0) < 0.05);
    }
    SECTION("uniform_int stays in range and rejects bad bounds") {
        Rng r(3);
        std::vector<int> hist(7, 0);
        for (int i = 0; i < 7000; ++i) {
            const int64_t v = r.uniform_int(7);
            REQUIRE(v >= 0);
            REQUIRE(v < 7);
            ++hist[static_cast<size_t>(v)];
        }
        for (int h : hist) REQUIRE(h > 700);  // ~1000 expected per bucket
        REQUIRE_THROWS_AS(r.uniform_int(0), UsageError);
        REQUIRE_THROWS_AS(r.uniform_int(-5), UsageError);
    }
    SECTION("state roundtrip resumes the exact stream, including normals") {
        Rng r(99);
        for (int i = 0; i < 17; ++i) r.normal();
        const auto snapshot = r.state();
        std::vector<double> first;
        for (int i = 0; i < 20; ++i) first.push_back(r.normal());
        Rng resumed(0);
        resumed.set_state(snapshot);
        for (int i = 0; i < 20; ++i) REQUIRE(resumed.normal() == first[static_cast<size_t>(i)]);
    }
    SECTION("shuffle permutes") {
        Rng r(5);
        std::vector<int> v(50);
        std::iota(v.begin(), v.end(), 0);
        auto shuffled = v;
        r.shuffle(shuffled.begin(), shuffled.end());
        REQUIRE(shuffled != v);  // astronomically unlikely to be identity
        std::sort(shuffled.begin(), shuffled.end());
        REQUIRE(shuffled == v);
    }
    SECTION("derived seeds separate streams by tag and index") {
        const uint64_t root = 1234;
        REQUIRE(derive_seed(root, "a") != derive_seed(root, "b"));
        REQUIRE(derive_seed(root, "a", 0) != derive_seed(root, "a", 1));
        REQUIRE(derive_seed(root, "a", 1) == derive_seed(root, "a", 1));
        REQUIRE(derive_seed(root, "a") != derive_seed(root + 1, "a"));
    }
}

TEST_CASE("tensor construction and scalar access") {
    auto t = Tensor<double>::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
    REQUIRE(t.shape() == Shape{2, 3});
    REQUIRE(t.size() == 6);
    REQUIRE(t.values()[4] == 5.0);

    REQUIRE_THROWS_AS(Tensor<double>::from_values({2, 2}, {1, 2, 3}), UsageError);
    REQUIRE_THROWS_AS(Tensor<double>::zeros({0, 3}), UsageError);
    REQUIRE_THROWS_AS(Tensor<double>::zeros({2, -1}), UsageError);

    REQUIRE(Tensor<double>::full({3}, 2.5).values() == std::vector<double>{2.5, 2.5, 2.5});
    REQUIRE(Tensor<double>::from_values({1}, {7.0}).scalar() == 7.0);
    REQUIRE_THROWS_AS(t.scalar(), UsageError);
    REQUIRE_THROWS_AS(t.grad(), UsageError);
}

TEST_CASE("reshape views values and checks element counts") {
    auto t = Tensor<double>::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
    auto r = reshape(t, {3, 2});
    REQUIRE(r.shape() == Shape{3, 2});
    REQUIRE(r.values() == t.values());
    REQUIRE(flatten(t).shape() == Shape{6});
    REQUIRE_THROWS_MATCHES(reshape(t, {4, 2}), UsageError,
                           Catch::Matchers::MessageMatches(ContainsSubstring("[2, 3]") &&
                                                           ContainsSubstring("[4, 2]")));

    // gradient flows straight through the view
    t.set_requires_grad(true);
    auto loss = sum(mul(reshape(t, {6}), reshape(t, {6})));
    backward(loss);
    for (size_t i = 0; i < 6; ++i) REQUIRE(t.grad()[i] == 2.0 * t.values()[i]);
}

TEST_CASE("elementwise forward values and gradients") {
    SECTION("add/sub/mul values") {
        auto a = Tensor<double>::from_values({3}, {1, -2, 3});
        auto b = Tensor<double>::from_values({3}, {10, 20, 30});
        REQUIRE(add(a, b).values() == std::vector<double>{11, 18, 33});
        REQUIRE(sub(a, b).values() == std::vector<double>{-9, -22, -27});
        REQUIRE(mul(a, b).values() == std::vector<double>{10, -40, 90});
        auto c = Tensor<double>::from_values({2}, {1, 2});
        REQUIRE_THROWS_AS(add(a, c), UsageError);
    }
    SECTION("sum(x*x) backpropagates exactly 2x") {
        auto x = Tensor<double>::from_values({4}, {0.5, -1.25, 2.0, 3.5});
        x.set_requires_grad(true);
        backward(sum(mul(x, x)));
        for (size_t i = 0; i < 4; ++i) REQUIRE(x.grad()[i] == 2.0 * x.values()[i]);
    }
    SECTION("sub gradient signs") {
        auto a = Tensor<double>::from_values({2}, {1, 2});
        auto b = Tensor<double>::from_values({2}, {3, 4});
        a.set_requires_grad(true);
        b.set_requires_grad(true);
        backward(sum(sub(a, b)));
        REQUIRE(a.grad() == std::vector<double>{1, 1});
        REQUIRE(b.grad() == std::vector<double>{-1, -1});
    }
    SECTION("repeated use of one tensor accumulates") {
        auto x = Tensor<double>::from_values({2}, {3, 4});
        x.set_requires_grad(true);
        backward(sum(add(x, x)));
        REQUIRE(x.grad() == std::vector<double>{2, 2});
    }
    SECTION("sigmoid is stable at extremes and has y(1-y) gradient") {
        auto x = Tensor<double>::from_values({4}, {0.0, -800.0, 800.0, 1.5});
        x.set_requires_grad(true);
        auto y = sigmoid(x);
        REQUIRE(y.values()[0] == 0.5);
        REQUIRE(y.values()[1] >= 0.0);
        REQUIRE(y.values()[1] < 1e-300);
        REQUIRE(y.values()[2] == 1.0);
        REQUIRE(std::isfinite(y.values()[3]));
        backward(sum(y));
        for (size_t i = 0; i < 4; ++i) {
            const double yi = y.values()[i];
            REQUIRE(x.grad()[i] == yi * (1.0 - yi));
        }
    }
    SECTION("tanh and relu") {
        auto x = Tensor<double>::from_values({4}, {-2.0, -0.5, 0.0, 1.5});
        x.set_requires_grad(true);
        auto y = relu(x);
        REQUIRE(y.values() == std::vector<double>{0.0, 0.0, 0.0, 1.5});
        backward(sum(y));
        REQUIRE(x.grad() == std::vector<double>{0.0, 0.0, 0.0, 1.0});

        auto z = tanh(Tensor<double>::from_values({2}, {0.0, 1.0}));
        REQUIRE(z.values()[0] == 0.0);
        REQUIRE(z.values()[1] == Catch::Approx(std::tanh(1.0)));
    }
    SECTION("dispatcher enforces arity") {
        auto a = Tensor<double>::from_values({2}, {1, 2});
        auto b = Tensor<double>::from_values({2}, {3, 4});
        REQUIRE(elementwise(EwKind::add, a, &b).values() == std::vector<double>{4, 6});
        REQUIRE(elementwise(EwKind::relu, a).values() == std::vector<double>{1, 2});
        REQUIRE_THROWS_AS(elementwise(EwKind::mul, a), UsageError);
        REQUIRE_THROWS_AS(elementwise(EwKind::tanh, a, &b), UsageError);
    }
}

TEST_CASE("autodiff bookkeeping") {
    SECTION("untracked inputs record nothing") {
        Graph<double>::active().clear();
        auto a = Tensor<double>::from_values({2}, {1, 2});
        auto b = Tensor<double>::from_values({2}, {3, 4});
        auto c = mul(a, b);
        REQUIRE(Graph<double>::active().size() == 0);
        REQUIRE(!c.requires_grad());
    }
    SECTION("NoGradGuard suppresses tracking and restores on exit") {
        Graph<double>::active().clear();
        auto a = Tensor<double>::from_values({2}, {1, 2});
        a.set_requires_grad(true);
        {
            autodiff::NoGradGuard guard;
            auto c = mul(a, a);
            REQUIRE(!c.requires_grad());
            REQUIRE(Graph<double>::active().size() == 0);
        }
        auto d = mul(a, a);
        REQUIRE(d.requires_grad());
        REQUIRE(Graph<double>::active().size() == 1);
        Graph<double>::active().clear();
    }
    SECTION("backward consumes the tape") {
        auto x = Tensor<double>::from_values({3}, {1, 2, 3});
        x.set_requires_grad(true);
        backward(sum(mul(x, x)));
        REQUIRE(Graph<double>::active().size() == 0);
    }
    SECTION("side branches off the loss path stay gradient-free") {
        auto x = Tensor<double>::from_values({2}, {1, 2});
        x.set_requires_grad(true);
        auto unused = mul(x, x);  // recorded but not part of the loss
        backward(sum(x));
        REQUIRE(!unused.has_grad());
        REQUIRE(x.grad() == std::vector<double>{1, 1});
    }
    SECTION("backward requires a scalar") {
        auto x = Tensor<double>::from_values({2}, {1, 2});
        x.set_requires_grad(true);
        auto y = mul(x, x);
        REQUIRE_THROWS_AS(backward(y), UsageError);
        Graph<double>::active().clear();
    }
    SECTION("zero_grad drops accumulated gradients") {
        auto x = Tensor<double>::from_values({2}, {1, 2});
        x.set_requires_grad(true);
        backward(sum(x));
        REQUIRE(x.has_grad());
        x.zero_grad();
        REQUIRE(!x.has_grad());
    }
}

TEST_CASE("conv3d forward geometry and values") {
    SECTION("1x1x1 identity kernel reproduces the input") {
        Rng rng(21);
        auto x = rand_tensor({1, 3, 4, 5}, rng, -1, 1, false);
        auto k = Tensor<double>::from_values({1, 1, 1, 1, 1}, {1.0});
        auto y = conv3d(x, k);
        REQUIRE(y.shape() == x.shape());
        REQUIRE(y.values() == x.values());
    }
    SECTION("all-ones 3x3x3 kernel counts the in-bounds neighborhood") {
        auto x = Tensor<double>::full({1, 3, 3, 3}, 1.0);
        auto k = Tensor<double>::full({1, 1, 3, 3, 3}, 1.0);
        auto y = conv3d(x, k, 1, 1);
        REQUIRE(y.shape() == Shape{1, 3, 3, 3});
        auto at = [&](int d, int h, int w) { return y.values()[(d * 3 + h) * 3 + w]; };
        REQUIRE(at(1, 1, 1) == 27.0);  // interior
        REQUIRE(at(0, 0, 0) == 8.0);   // corner
        REQUIRE(at(0, 0, 1) == 12.0);  // edge
        REQUIRE(at(0, 1, 1) == 18.0);  // face
    }
    SECTION("stride and padding geometry") {
        auto x = Tensor<double>::full({1, 5, 5, 5}, 1.0);
        auto k = Tensor<double>::full({2, 1, 3, 3, 3}, 0.5);
        REQUIRE(conv3d(x, k, 2, 0).shape() == Shape{2, 2, 2, 2});
        REQUIRE(conv3d(x, k, 1, 1).shape() == Shape{2, 5, 5, 5});
        REQUIRE(conv3d(x, k, 2, 1).shape() == Shape{2, 3, 3, 3});
    }
    SECTION("bias is added per output channel") {
        auto x = Tensor<double>::full({1, 2, 2, 2}, 1.0);
        auto k = Tensor<double>::full({2, 1, 1, 1, 1}, 2.0);
        auto b = Tensor<double>::from_values({2}, {10.0, -10.0});
        auto y = conv3d(x, k, b);
        REQUIRE(y.values()[0] == 12.0);
        REQUIRE(y.values()[8] == -8.0);
    }
    SECTION("shape validation errors name the offending shapes") {
        auto x = Tensor<double>::full({2, 4, 4, 4}, 1.0);
        auto k3 = Tensor<double>::full({1, 3, 3, 3, 3}, 1.0);
        REQUIRE_THROWS_MATCHES(conv3d(x, k3), UsageError,
                               Catch::Matchers::MessageMatches(
                                   ContainsSubstring("[2, 4, 4, 4]") &&
                                   ContainsSubstring("[1, 3, 3, 3, 3]")));
        auto keven = Tensor<double>::full({1, 2, 2, 2, 2}, 1.0);
        REQUIRE_THROWS_AS(conv3d(x, keven), UsageError);
        auto kodd = Tensor<double>::full({1, 2, 3, 3, 3}, 1.0);
        REQUIRE_THROWS_MATCHES(conv3d(x, kodd, 2, 0), UsageError,
                               Catch::Matchers::MessageMatches(
                                   ContainsSubstring("non-integral output size along depth")));
        auto bad_bias = Tensor<double>::from_values({2}, {1.0, 2.0});
        REQUIRE_THROWS_AS(conv3d(x, kodd, bad_bias, 1, 1), UsageError);
        REQUIRE_THROWS_AS(conv3d(x, kodd, 0, 0), UsageError);
        REQUIRE_THROWS_AS(conv3d(x, kodd, 1, -1), UsageError);
    }
}

TEST_CASE("conv3d agrees with the reference implementation") {
    Rng rng(2024);
    struct Cfg {
        int cin, cout, D, H, W, k, stride, pad;
    };
    const Cfg cfgs[] = {
        {1, 1, 4, 4, 4, 3, 1, 1}, {2, 3, 5, 4, 6, 3, 1, 0}, {3, 2, 7, 5, 5, 3, 2, 1},
        {1, 4, 7, 7, 7, 5, 2, 2}, {2, 2, 3, 3, 3, 1, 1, 0}, {4, 1, 5, 6, 5, 3, 1, 2},
    };
    for (const auto& c : cfgs) {
        CAPTURE(c.cin, c.cout, c.D, c.k, c.stride, c.pad);
        auto x = rand_tensor({c.cin, c.D, c.H, c.W}, rng, -1, 1, false);
        auto k = rand_tensor({c.cout, c.cin, c.k, c.k, c.k}, rng, -1, 1, false);
        auto b = rand_tensor({c.cout}, rng, -1, 1, false);
        auto y = conv3d(x, k, b, c.stride, c.pad);
        int od, oh, ow;
        const auto ref = oracle::conv3d_reference(x.values(), c.cin, c.D, c.H, c.W, k.values(),
                                                  c.cout, c.k, &b.values(), c.stride, c.pad,
                                                  od, oh, ow);
        REQUIRE(y.shape() == Shape{c.cout, od, oh, ow});
        for (size_t i = 0; i < ref.size(); ++i) {
            if (std::abs(y.values()[i] - ref[i]) >= 1e-12) {
                CAPTURE(i, y.values()[i], ref[i]);
                REQUIRE(std::abs(y.values()[i] - ref[i]) < 1e-12);
            }
        }
    }
}

TEST_CASE("conv3d gradients match central differences") {
    Rng rng(31);
    auto x = rand_tensor({2, 3, 3, 3}, rng);
    auto k = rand_tensor({2, 2, 3, 3, 3}, rng, -0.5, 0.5);
    auto b = rand_tensor({2}, rng, -0.1, 0.1);
    auto f = [&]() {
        auto y = conv3d(x, k, b, 1, 1);
        return sum(mul(y, y));
    };
    REQUIRE(finite_diff_check<double>(f, {x, k, b}, 1e-5) < 1e-6);

    SECTION("inputs that do not require gradients receive none") {
        auto x2 = rand_tensor({1, 3, 3, 3}, rng, -1, 1, false);
        auto k2 = rand_tensor({1, 1, 3, 3, 3}, rng);
        backward(sum(conv3d(x2, k2, 1, 1)));
        REQUIRE(!x2.has_grad());
        REQUIRE(k2.has_grad());
    }
}

TEST_CASE("instance_norm normalizes per channel") {
    SECTION("output statistics match the closed form") {
        Rng rng(41);
        auto x = rand_tensor({3, 4, 4, 4}, rng, -2, 5, false);
        auto gamma = Tensor<double>::full({3}, 1.0);
        auto beta = Tensor<double>::zeros({3});
        auto y = instance_norm(x, gamma, beta);
        const int64_t n = 64;
        for (int c = 0; c < 3; ++c) {
            const auto in_stats = oracle::two_pass_stats(x.values().data() + c * n, n);
            const auto out_stats = oracle::two_pass_stats(y.values().data() + c * n, n);
            REQUIRE(std::abs(out_stats.mean) < 1e-12);
            // with eps in the denominator the output variance is var/(var+eps)
            REQUIRE(out_stats.var ==
                    Catch::Approx(in_stats.var / (in_stats.var + 1e-5)).epsilon(1e-10));
        }
    }
    SECTION("constant channels collapse to beta") {
        auto x = Tensor<double>::full({2, 2, 2, 2}, 3.25);
        auto gamma = Tensor<double>::full({2}, 1.0);
        auto beta = Tensor<double>::from_values({2}, {0.5, -0.5});
        auto y = instance_norm(x, gamma, beta);
        for (int i = 0; i < 8; ++i) REQUIRE(y.values()[static_cast<size_t>(i)] == 0.5);
        for (int i = 8; i < 16; ++i) REQUIRE(y.values()[static_cast<size_t>(i)] == -0.5);
    }
    SECTION("gamma 0 beta 5 pins the output") {
        Rng rng(43);
        auto x = rand_tensor({1, 3, 3, 3}, rng, -1, 1, false);
        auto y = instance_norm(x, Tensor<double>::zeros({1}), Tensor<double>::full({1}, 5.0));
        for (double v : y.values()) REQUIRE(v == 5.0);
    }
    SECTION("shape and eps validation") {
        auto x = Tensor<double>::full({2, 2, 2, 2}, 1.0);
        auto g1 = Tensor<double>::full({1}, 1.0);
        auto b2 = Tensor<double>::zeros({2});
        REQUIRE_THROWS_AS(instance_norm(x, g1, b2), UsageError);
        auto g2 = Tensor<double>::full({2}, 1.0);
        REQUIRE_THROWS_AS(instance_norm(x, g2, b2, 0.0), UsageError);
        REQUIRE_THROWS_AS(instance_norm(Tensor<double>::full({2, 2}, 1.0), g2, b2), UsageError);
    }
    SECTION("gradients match central differences") {
        Rng rng(47);
        auto x = rand_tensor({2, 3, 3, 3}, rng);
        auto gamma = rand_tensor({2}, rng, 0.5, 1.5);
        auto beta = rand_tensor({2}, rng, -0.5, 0.5);
        // A fixed random weighting keeps the loss genuinely sensitive to the
        // input; a bare sum of squares is flattened by the normalization and
        // drowns the finite differences in rounding noise.
        auto w = rand_tensor({2, 3, 3, 3}, rng, -1.0, 1.0, false);
        auto f = [&]() {
            auto y = instance_norm(x, gamma, beta);
            return sum(mul(w, add(y, mul(y, y))));
        };
        REQUIRE(finite_diff_check<double>(f, {x, gamma, beta}, 1e-5) < 1e-6);
    }
}

TEST_CASE("avgpool3d and upsample3d_nearest") {
    SECTION("2x2x2 block of 0..7 averages to 3.5") {
        auto x = Tensor<double>::from_values({1, 2, 2, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
        auto y = avgpool3d(x, 2);
        REQUIRE(y.shape() == Shape{1, 1, 1, 1});
        REQUIRE(y.values()[0] == 3.5);
    }
    SECTION("divisibility is enforced") {
        auto x = Tensor<double>::full({1, 3, 4, 4}, 1.0);
        REQUIRE_THROWS_MATCHES(avgpool3d(x, 2), UsageError,
                               Catch::Matchers::MessageMatches(ContainsSubstring("3") &&
                                                               ContainsSubstring("factor 2")));
    }
    SECTION("upsample repeats each voxel into a block") {
        auto x = Tensor<double>::from_values({1, 1, 1, 2}, {3.0, 4.0});
        auto y = upsample3d_nearest(x, 2);
        REQUIRE(y.shape() == Shape{1, 2, 2, 4});
        for (int d = 0; d < 2; ++d)
            for (int h = 0; h < 2; ++h)
                for (int w = 0; w < 4; ++w)
                    REQUIRE(y.values()[(d * 2 + h) * 4 + w] == (w < 2 ? 3.0 : 4.0));
    }
    SECTION("avgpool is a left inverse of upsample on dyadic values") {
        // k/256 values keep every intermediate sum exact, so equality is bitwise
        Rng rng(53);
        auto x = Tensor<double>::zeros({2, 4, 4, 4});
        for (auto& v : x.values()) v = static_cast<double>(rng.uniform_int(512) - 256) / 256.0;
        auto restored = avgpool3d(upsample3d_nearest(x, 2), 2);
        REQUIRE(restored.shape() == x.shape());
        REQUIRE(restored.values() == x.values());
    }
    SECTION("gradients match central differences") {
        Rng rng(59);
        auto x = rand_tensor({1, 4, 4, 4}, rng);
        auto f = [&]() {
            auto up = upsample3d_nearest(x, 2);
            auto down = avgpool3d(x, 2);
            return add(sum(mul(up, up)), sum(mul(down, down)));
        };
        REQUIRE(finite_diff_check<double>(f, {x}, 1e-5) < 1e-6);
    }
}

TEST_CASE("concat_channels stacks along the channel axis") {
    SECTION("single input is the identity") {
        Rng rng(61);
        auto x = rand_tensor({3, 2, 2, 2}, rng, -1, 1, false);
        auto y = concat_channels<double>({x});
        REQUIRE(y.shape() == x.shape());
        REQUIRE(y.values() == x.values());
    }
    SECTION("channel blocks are recoverable") {
        Rng rng(67);
        auto a = rand_tensor({2, 2, 2, 2}, rng, -1, 1, false);
        auto b = rand_tensor({3, 2, 2, 2}, rng, -1, 1, false);
        auto y = concat_channels<double>({a, b});
        REQUIRE(y.shape() == Shape{5, 2, 2, 2});
        for (size_t i = 0; i < a.values().size(); ++i) REQUIRE(y.values()[i] == a.values()[i]);
        for (size_t i = 0; i < b.values().size(); ++i)
            REQUIRE(y.values()[a.values().size() + i] == b.values()[i]);
    }
    SECTION("spatial mismatch and rank errors") {
        auto a = Tensor<double>::full({1, 2, 2, 2}, 1.0);
        auto b = Tensor<double>::full({1, 2, 2, 3}, 1.0);
        REQUIRE_THROWS_MATCHES(concat_channels<double>({a, b}), UsageError,
                               Catch::Matchers::MessageMatches(
                                   ContainsSubstring("[1, 2, 2, 2]") &&
                                   ContainsSubstring("[1, 2, 2, 3]")));
        REQUIRE_THROWS_AS(concat_channels<double>({}), UsageError);
        REQUIRE_THROWS_AS(concat_channels<double>({Tensor<double>::full({2, 2}, 1.0)}), UsageError);
    }
    SECTION("gradient slices back to the parts") {
        Rng rng(71);
        auto a = rand_tensor({1, 2, 2, 2}, rng);
        auto b = rand_tensor({2, 2, 2, 2}, rng);
        backward(sum(mul(concat_channels<double>({a, b}), concat_channels<double>({a, b}))));
        for (size_t i = 0; i < a.values().size(); ++i)
            REQUIRE(a.grad()[i] == Catch::Approx(2.0 * a.values()[i]));
        for (size_t i = 0; i < b.values().size(); ++i)
            REQUIRE(b.grad()[i] == Catch::Approx(2.0 * b.values()[i]));
    }
}

TEST_CASE("float instantiation tracks the double path") {
    Rng rng(73);
    auto xd = rand_tensor({2, 4, 4, 4}, rng, -1, 1, false);
    auto kd = rand_tensor({3, 2, 3, 3, 3}, rng, -0.5, 0.5, false);
    std::vector<float> xf(xd.values().begin(), xd.values().end());
    std::vector<float> kf(kd.values().begin(), kd.values().end());
    auto yf = conv3d(Tensor<float>::from_values({2, 4, 4, 4}, std::move(xf)),
                     Tensor<float>::from_values({3, 2, 3, 3, 3}, std::move(kf)), 1, 1);
    auto yd = conv3d(xd, kd, 1, 1);
    REQUIRE(yf.shape() == yd.shape());
    for (size_t i = 0; i < yd.values().size(); ++i)
        REQUIRE(static_cast<double>(yf.values()[i]) == Catch::Approx(yd.values()[i]).margin(1e-4));
}

TEST_CASE("finite_diff_check rejects zero eps and certifies a known gradient") {
    auto x = Tensor<double>::from_values({3}, {0.3, -0.7, 1.1});
    x.set_requires_grad(true);
    auto f = [&]() { return sum(mul(x, x)); };
    REQUIRE_THROWS_AS(finite_diff_check<double>(f, {x}, 0.0), UsageError);
    REQUIRE(finite_diff_check<double>(f, {x}, 1e-6) < 1e-8);
}
