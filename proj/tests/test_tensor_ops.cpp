#include "crossrf/ops.hpp"
#include "crossrf/optim.hpp"
#include "gradcheck.hpp"

#include <doctest.h>

#include <cmath>

using namespace crossrf;
using crossrf::testing::gradcheck;
using crossrf::testing::Leaf;
using crossrf::testing::random_leaf;
using crossrf::testing::weighted_sum;

namespace {

Vector<double> vec(std::initializer_list<double> v) {
    Vector<double> out(static_cast<Index>(v.size()));
    Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

// Straight triple loop, same summation order as the definition: bias first, then c, then k.
Vector<double> naive_conv1d(const Vector<double>& x, const Vector<double>& w, const Vector<double>& b, Index B,
                            Index Cin, Index L, Index Cout, Index K, Index stride, Index pad) {
    const Index Lout = (L + 2 * pad - K) / stride + 1;
    Vector<double> y(B * Cout * Lout);
    for (Index bi = 0; bi < B; ++bi)
        for (Index o = 0; o < Cout; ++o)
            for (Index t = 0; t < Lout; ++t) {
                double acc = b[o];
                for (Index c = 0; c < Cin; ++c)
                    for (Index k = 0; k < K; ++k) {
                        const Index pos = t * stride + k - pad;
                        if (pos >= 0 && pos < L) acc += w[(o * Cin + c) * K + k] * x[(bi * Cin + c) * L + pos];
                    }
                y[(bi * Cout + o) * Lout + t] = acc;
            }
    return y;
}

}  // namespace

TEST_CASE("conv1d forward") {
    Tape<double> tape;
    SUBCASE("identity kernel") {
        auto x = tape.constant({1, 1, 3}, vec({1, 2, 3}));
        auto w = tape.constant({1, 1, 1}, vec({1}));
        auto b = tape.constant({1}, vec({0}));
        auto y = conv1d(x, w, b, 1, 0);
        CHECK(y.shape() == Shape{1, 1, 3});
        CHECK(y.value() == vec({1, 2, 3}));
    }
    SUBCASE("output length formula") {
        auto x = tape.constant({1, 1, 10}, Vector<double>::Zero(10));
        auto w = tape.constant({1, 1, 3}, Vector<double>::Zero(3));
        auto b = tape.constant({1}, Vector<double>::Zero(1));
        CHECK(conv1d(x, w, b, 2, 0).dim(2) == 4);
    }
    SUBCASE("errors") {
        auto x = tape.constant({1, 2, 4}, Vector<double>::Zero(8));
        auto w = tape.constant({1, 3, 3}, Vector<double>::Zero(9));
        auto b = tape.constant({1}, Vector<double>::Zero(1));
        CHECK_THROWS_WITH_AS(conv1d(x, w, b), doctest::Contains("Cin"), ShapeError);
        auto w5 = tape.constant({1, 2, 5}, Vector<double>::Zero(10));
        CHECK_THROWS_AS(conv1d(x, w5, b), ShapeError);
    }
}

TEST_CASE("conv1d matches naive triple loop exactly") {
    // Small-integer data keeps every partial sum exact, so GEMM blocking order cannot matter.
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> small(-4, 4);
    for (int trial = 0; trial < 20; ++trial) {
        const Index B = 1 + trial % 3, Cin = 1 + trial % 2, Cout = 1 + trial % 4, K = 1 + trial % 5;
        const Index stride = 1 + trial % 3, pad = trial % 2;
        const Index L = K + 3 + trial;
        auto fill = [&](Index n) {
            Vector<double> v(n);
            for (Index i = 0; i < n; ++i) v[i] = small(rng);
            return v;
        };
        Vector<double> xv = fill(B * Cin * L), wv = fill(Cout * Cin * K), bv = fill(Cout);
        Tape<double> tape;
        auto y = conv1d(tape.constant({B, Cin, L}, xv), tape.constant({Cout, Cin, K}, wv), tape.constant({Cout}, bv),
                        stride, pad);
        CHECK(y.value() == naive_conv1d(xv, wv, bv, B, Cin, L, Cout, K, stride, pad));
    }
}

TEST_CASE("conv1d gradients match finite differences") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(seed);
        const Index stride = 1 + seed % 2, pad = seed % 2;
        auto check = gradcheck(
            [&](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                return weighted_sum(t, conv1d(in[0], in[1], in[2], stride, pad), seed);
            },
            {random_leaf({2, 2, 8}, rng), random_leaf({3, 2, 3}, rng), random_leaf({3}, rng)});
        CHECK(check.max_rel_error() < 1e-5);
    }
    // The plain sum(output) case.
    std::mt19937_64 rng(99);
    auto check = gradcheck(
        [](Tape<double>&, const std::vector<Tensor<double>>& in) { return sum(conv1d(in[0], in[1], in[2])); },
        {random_leaf({2, 2, 8}, rng), random_leaf({3, 2, 3}, rng), random_leaf({3}, rng)});
    CHECK(check.max_rel_error() < 1e-5);
}

TEST_CASE("batchnorm1d") {
    std::mt19937_64 rng(3);
    SUBCASE("train mode normalizes per channel") {
        Tape<double> tape;
        BatchNormState<double> bn(3);
        Leaf x = random_leaf({4, 3, 5}, rng, -3, 7);
        auto y = batchnorm1d(tape.constant(x.shape, x.value), bn, Mode::Train);
        for (Index c = 0; c < 3; ++c) {
            double m = 0, v = 0;
            for (Index b = 0; b < 4; ++b)
                for (Index l = 0; l < 5; ++l) m += y.value()[(b * 3 + c) * 5 + l];
            m /= 20;
            for (Index b = 0; b < 4; ++b)
                for (Index l = 0; l < 5; ++l) v += std::pow(y.value()[(b * 3 + c) * 5 + l] - m, 2);
            v /= 20;
            CHECK(std::abs(m) < 1e-6);
            CHECK(std::abs(v - 1) < 1e-3);
        }
        // running stats moved 10% toward the batch statistics
        CHECK(bn.running_mean.cwiseAbs().maxCoeff() > 0);
        CHECK((bn.running_var.array() >= 0).all());
    }
    SUBCASE("eval mode with unit running stats is identity") {
        Tape<double> tape;
        BatchNormState<double> bn(3);
        bn.eps = 1e-12;
        Leaf x = random_leaf({2, 3, 4}, rng);
        auto y = batchnorm1d(tape.constant(x.shape, x.value), bn, Mode::Eval);
        CHECK((y.value() - x.value).cwiseAbs().maxCoeff() < 1e-6);
    }
    SUBCASE("running statistics follow the momentum rule") {
        Tape<double> tape;
        BatchNormState<double> bn(1);
        batchnorm1d(tape.constant({4, 1}, vec({1, 2, 3, 4})), bn, Mode::Train);
        CHECK(bn.running_mean[0] == doctest::Approx(0.1 * 2.5));
        CHECK(bn.running_var[0] == doctest::Approx(0.9 + 0.1 * 1.25));
    }
    SUBCASE("degenerate batch in train mode") {
        Tape<double> tape;
        BatchNormState<double> bn(2);
        CHECK_THROWS_AS(batchnorm1d(tape.constant({1, 2, 1}, vec({1, 2})), bn, Mode::Train),
                        std::invalid_argument);
        CHECK_NOTHROW(batchnorm1d(tape.constant({1, 2, 1}, vec({1, 2})), bn, Mode::Eval));
    }
    SUBCASE("input gradient, both modes") {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            for (Mode mode : {Mode::Train, Mode::Eval}) {
                std::mt19937_64 r(seed);
                BatchNormState<double> bn(3);
                bn.running_mean = vec({0.3, -0.2, 0.1});
                bn.running_var = vec({1.5, 0.7, 2.0});
                bn.gamma.value = random_leaf({3}, r, 0.5, 1.5).value;
                bn.beta.value = random_leaf({3}, r).value;
                auto check = gradcheck(
                    [&](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                        return weighted_sum(t, batchnorm1d(in[0], bn, mode), seed);
                    },
                    {random_leaf({4, 3, 5}, r)});
                CHECK(check.max_rel_error() < 1e-5);
            }
        }
    }
}

TEST_CASE("batchnorm1d parameter gradients") {
    // gamma/beta live in the state; compare their tape gradients with finite differences directly.
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        for (Mode mode : {Mode::Train, Mode::Eval}) {
            std::mt19937_64 r(seed + 10);
            BatchNormState<double> bn(3);
            bn.running_var = vec({1.5, 0.7, 2.0});
            bn.gamma.value = random_leaf({3}, r, 0.5, 1.5).value;
            bn.beta.value = random_leaf({3}, r).value;
            Leaf x = random_leaf({4, 3, 5}, r);
            auto loss_of = [&](BatchNormState<double>& s) {
                Tape<double> t;
                return weighted_sum(t, batchnorm1d(t.constant(x.shape, x.value), s, mode), seed).item();
            };
            Tape<double> tape;
            bn.gamma.clear_grad();
            bn.beta.clear_grad();
            auto loss = weighted_sum(tape, batchnorm1d(tape.constant(x.shape, x.value), bn, mode), seed);
            tape.backward(loss);
            for (Parameter<double>* p : {&bn.gamma, &bn.beta}) {
                Vector<double> fd(3);
                for (Index i = 0; i < 3; ++i) {
                    const double orig = p->value[i];
                    p->value[i] = orig + 1e-5;
                    const double up = loss_of(bn);
                    p->value[i] = orig - 1e-5;
                    const double down = loss_of(bn);
                    p->value[i] = orig;
                    fd[i] = (up - down) / 2e-5;
                }
                CHECK((p->grad - fd).norm() / fd.norm() < 1e-5);
            }
        }
    }
}

TEST_CASE("leaky_relu") {
    Tape<double> tape;
    CHECK(leaky_relu(tape.constant({3}, vec({-1, 0, 2})), 0.2).value().isApprox(vec({-0.2, 0, 2})));
    Vector<double> x = vec({-3, -0.5, 0.25, 4});
    CHECK(leaky_relu(tape.constant({4}, x), 1.0).value() == x);

    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(seed);
        Leaf l = random_leaf({3, 7}, rng);
        for (Index i = 0; i < l.value.size(); ++i) {
            if (std::abs(l.value[i]) < 1e-3) l.value[i] = 0.5;
        }
        auto check = gradcheck(
            [&](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                return weighted_sum(t, leaky_relu(in[0], 0.2), seed);
            },
            {l});
        CHECK(check.max_rel_error() < 1e-6);
    }
}

TEST_CASE("dropout") {
    Tape<double> tape;
    Rng rng(1);
    Vector<double> x = vec({1, 2, 3, 4});
    auto t = tape.constant({4}, x);
    CHECK(dropout(t, 0.0, Mode::Train, rng).value() == x);
    CHECK(dropout(t, 0.0, Mode::Eval, rng).value() == x);
    CHECK(dropout(t, 0.5, Mode::Eval, rng).value() == x);
    CHECK_THROWS_AS(dropout(t, 1.0, Mode::Train, rng), std::invalid_argument);

    SUBCASE("inverted scaling keeps the mean") {
        Tape<double> big;
        auto ones = big.constant({100000}, Vector<double>::Ones(100000));
        Rng r(2024);
        const double m = dropout(ones, 0.3, Mode::Train, r).value().mean();
        CHECK(std::abs(m - 1.0) < 0.01);
    }
    SUBCASE("same seed gives the same mask") {
        Tape<double> a;
        auto ones = a.constant({256}, Vector<double>::Ones(256));
        Rng r1(5), r2(5);
        CHECK(dropout(ones, 0.4, Mode::Train, r1).value() == dropout(ones, 0.4, Mode::Train, r2).value());
    }
    SUBCASE("gradient follows the mask") {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            std::mt19937_64 r(seed);
            auto check = gradcheck(
                [&](Tape<double>& tp, const std::vector<Tensor<double>>& in) {
                    Rng mask_rng(seed);
                    return weighted_sum(tp, dropout(in[0], 0.3, Mode::Train, mask_rng), seed);
                },
                {random_leaf({4, 6}, r)});
            CHECK(check.max_rel_error() < 1e-6);
        }
    }
}

TEST_CASE("adaptive_avg_pool1d") {
    Tape<double> tape;
    auto x = tape.constant({1, 1, 5}, vec({1, 2, 3, 4, 5}));
    CHECK(adaptive_avg_pool1d(x, 2).value() == vec({2.0, 4.0}));
    CHECK(adaptive_avg_pool1d(x, 1).value()[0] == doctest::Approx(3.0));
    auto c = tape.constant({2, 2, 7}, Vector<double>::Constant(28, 1.75));
    for (Index n = 1; n <= 7; ++n) {
        CHECK((adaptive_avg_pool1d(c, n).value().array() == 1.75).all());
    }
    CHECK_THROWS_AS(adaptive_avg_pool1d(x, 6), ShapeError);

    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(seed);
        const Index out = 1 + seed;
        auto check = gradcheck(
            [&](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                return weighted_sum(t, adaptive_avg_pool1d(in[0], out), seed);
            },
            {random_leaf({2, 3, 9}, rng)});
        CHECK(check.max_rel_error() < 1e-6);
    }
}

TEST_CASE("linear") {
    Tape<double> tape;
    auto x = tape.constant({1, 2}, vec({3, 4}));
    CHECK(linear(x, tape.constant({1, 2}, vec({1, 1})), tape.constant({1}, vec({0}))).value()[0] == 7);
    Vector<double> eye(4);
    eye << 1, 0, 0, 1;
    CHECK(linear(x, tape.constant({2, 2}, eye), tape.constant({2}, vec({0, 0}))).value() == vec({3, 4}));
    CHECK_THROWS_AS(linear(x, tape.constant({2, 3}, Vector<double>::Zero(6)), tape.constant({2}, vec({0, 0}))),
                    ShapeError);

    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(seed);
        auto check = gradcheck(
            [&](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                return weighted_sum(t, linear(in[0], in[1], in[2]), seed);
            },
            {random_leaf({3, 4}, rng), random_leaf({5, 4}, rng), random_leaf({5}, rng)});
        CHECK(check.max_rel_error() < 1e-6);
    }
}

TEST_CASE("softmax_t and log_softmax") {
    Tape<double> tape;
    auto eq = tape.constant({2, 4}, Vector<double>::Constant(8, 0.3));
    for (double T : {0.5, 1.0, 7.0}) {
        CHECK((softmax_t(eq, T).value().array() - 0.25).abs().maxCoeff() < 1e-12);
    }
    auto p = softmax_t(tape.constant({1, 2}, vec({1, 0})), 1.0);
    CHECK(p.value()[0] == doctest::Approx(0.7311).epsilon(1e-4));
    CHECK(p.value()[1] == doctest::Approx(0.2689).epsilon(1e-4));
    auto hot = softmax_t(tape.constant({1, 2}, vec({5, -5})), 1e6);
    CHECK(std::abs(hot.value()[0] - 0.5) < 1e-5);
    CHECK_THROWS_AS(softmax_t(eq, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(softmax_t(eq, -1.0), std::invalid_argument);

    auto ls = log_softmax(tape.constant({1, 2}, vec({2, 2})));
    CHECK(ls.value()[0] == doctest::Approx(std::log(0.5)));

    std::mt19937_64 rng(8);
    SUBCASE("stable for large magnitudes") {
        Leaf z = random_leaf({4, 5}, rng, -1e4, 1e4);
        auto sm = softmax_t(tape.constant(z.shape, z.value), 1.0);
        auto lsm = log_softmax(tape.constant(z.shape, z.value));
        for (Index r = 0; r < 4; ++r) {
            CHECK(std::abs(sm.value().segment(r * 5, 5).sum() - 1) < 1e-6);
            CHECK(std::abs(lsm.value().segment(r * 5, 5).array().exp().sum() - 1) < 1e-6);
        }
    }
    SUBCASE("log_softmax equals log of softmax") {
        Leaf z = random_leaf({3, 6}, rng, -4, 4);
        auto a = log_softmax(tape.constant(z.shape, z.value));
        auto b = softmax_t(tape.constant(z.shape, z.value), 1.0);
        CHECK((a.value() - b.value().array().log().matrix()).cwiseAbs().maxCoeff() < 1e-6);
    }
    SUBCASE("gradients") {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            std::mt19937_64 r(seed);
            const double T = 0.5 + seed;
            auto c1 = gradcheck(
                [&](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                    return weighted_sum(t, softmax_t(in[0], T), seed);
                },
                {random_leaf({3, 4}, r, -3, 3)});
            CHECK(c1.max_rel_error() < 1e-5);
            auto c2 = gradcheck(
                [&](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                    return weighted_sum(t, log_softmax(in[0]), seed);
                },
                {random_leaf({3, 4}, r, -3, 3)});
            CHECK(c2.max_rel_error() < 1e-5);
        }
    }
}

TEST_CASE("nll_loss") {
    Tape<double> tape;
    const std::vector<int> labels{0, 1};
    Vector<double> perfect(4);
    perfect << 0, -50, -50, 0;
    CHECK(nll_loss(tape.constant({2, 2}, perfect), labels).item() == 0.0);
    auto uniform = tape.constant({1, 4}, Vector<double>::Constant(4, std::log(0.25)));
    CHECK(nll_loss(uniform, std::vector<int>{2}).item() == doctest::Approx(1.3863).epsilon(1e-4));
    CHECK_THROWS_AS(nll_loss(uniform, std::vector<int>{4}), std::out_of_range);
    CHECK_THROWS_AS(nll_loss(uniform, std::vector<int>{-1}), std::out_of_range);

    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(seed);
        std::vector<int> lab{0, 2, 1, 2};
        auto check = gradcheck(
            [&](Tape<double>&, const std::vector<Tensor<double>>& in) { return nll_loss(log_softmax(in[0]), lab); },
            {random_leaf({4, 3}, rng, -2, 2)});
        CHECK(check.max_rel_error() < 1e-5);
    }
}

TEST_CASE("grad_reverse") {
    std::mt19937_64 rng(4);
    Leaf x = random_leaf({3, 5}, rng);
    SUBCASE("forward is bit-identical") {
        Tape<double> tape;
        auto y = grad_reverse(tape.constant(x.shape, x.value), 0.7);
        CHECK(y.value() == x.value);
    }
    SUBCASE("lambda = 1 negates exactly") {
        Tape<double> tape;
        auto v = tape.variable(x.shape, x.value);
        tape.backward(sum(grad_reverse(v, 1.0)));
        CHECK(tape.grad(v) == Vector<double>::Constant(15, -1.0));
    }
    SUBCASE("composed with linear: exactly -lambda times the plain gradient") {
        Leaf w = random_leaf({2, 5}, rng), b = random_leaf({2}, rng);
        auto run = [&](bool reversed) {
            Tape<double> tape;
            auto v = tape.variable(x.shape, x.value);
            auto in = reversed ? grad_reverse(v, 0.5) : v;
            auto y = linear(in, tape.constant(w.shape, w.value), tape.constant(b.shape, b.value));
            tape.backward(weighted_sum(tape, y, 1));
            return Vector<double>(tape.grad(v));
        };
        CHECK(run(true) == Vector<double>(-0.5 * run(false)));
    }
    SUBCASE("lambda = 0 blocks the gradient") {
        Tape<double> tape;
        auto v = tape.variable(x.shape, x.value);
        tape.backward(sum(grad_reverse(v, 0.0)));
        CHECK(tape.grad(v).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("backward") {
    SUBCASE("sum") {
        Tape<double> tape;
        auto x = tape.variable({3}, vec({1, -2, 5}));
        tape.backward(sum(x));
        CHECK(tape.grad(x) == vec({1, 1, 1}));
    }
    SUBCASE("sum of squares") {
        Tape<double> tape;
        auto x = tape.variable({2}, vec({1, 2}));
        tape.backward(sum(mul(x, x)));
        CHECK(tape.grad(x) == vec({2, 4}));
    }
    SUBCASE("non-scalar loss") {
        Tape<double> tape;
        auto x = tape.variable({2}, vec({1, 2}));
        CHECK_THROWS_AS(tape.backward(x), ShapeError);
    }
    SUBCASE("constants never receive gradients") {
        Tape<double> tape;
        auto x = tape.variable({2}, vec({1, 2}));
        auto c = tape.constant({2}, vec({3, 4}));
        tape.backward(sum(mul(x, c)));
        CHECK_FALSE(tape.has_grad(c));
        CHECK(tape.grad(x) == vec({3, 4}));
    }
    SUBCASE("parameters accumulate") {
        Parameter<double> p(Shape{2});
        p.value = vec({1, 2});
        Tape<double> tape;
        auto a = tape.parameter(p);
        auto b = tape.parameter(p);
        tape.backward(sum(add(a, mul(b, b))));
        CHECK(p.grad == vec({3, 5}));
    }
    SUBCASE("frozen parameters receive nothing") {
        Parameter<double> p(Shape{2});
        p.requires_grad = false;
        Tape<double> tape;
        auto x = tape.variable({2}, vec({1, 1}));
        tape.backward(sum(mul(x, tape.parameter(p))));
        CHECK_FALSE(p.has_grad());
    }
    SUBCASE("shared sub-expression") {
        Tape<double> tape;
        auto x = tape.variable({2}, vec({3, -1}));
        auto y = scale(x, 2.0);
        tape.backward(sum(add(y, mul(y, x))));
        // d/dx [2x + 2x^2] = 2 + 4x
        CHECK(tape.grad(x) == vec({14, -2}));
    }
}

TEST_CASE("concat_batch and detach") {
    std::mt19937_64 rng(1);
    auto check = gradcheck(
        [](Tape<double>& t, const std::vector<Tensor<double>>& in) {
            return weighted_sum(t, concat_batch(in[0], in[1]), 3);
        },
        {random_leaf({2, 3}, rng), random_leaf({4, 3}, rng)});
    CHECK(check.max_rel_error() < 1e-6);

    Tape<double> tape;
    auto x = tape.variable({2}, vec({1, 2}));
    auto d = detach(x);
    tape.backward(sum(add(mul(d, x), x)));
    CHECK(tape.grad(x) == vec({2, 3}));
    CHECK_FALSE(tape.has_grad(d));
}

TEST_CASE("adam") {
    SUBCASE("zero gradient leaves parameters unchanged") {
        Parameter<double> w(Shape{3});
        w.value = vec({1, -2, 3});
        Adam<double> opt({&w}, 0.1);
        w.grad = Vector<double>::Zero(3);
        opt.step();
        CHECK(w.value == vec({1, -2, 3}));
    }
    SUBCASE("one step descends") {
        Parameter<double> w(Shape{1});
        w.value[0] = 1;
        Adam<double> opt({&w}, 0.1);
        w.grad = 2 * w.value;
        opt.step();
        CHECK(std::abs(w.value[0]) < 1);
    }
    SUBCASE("converges on a shifted quadratic") {
        Parameter<double> w(Shape{1});
        Adam<double> opt({&w}, 0.1);
        for (int i = 0; i < 200; ++i) {
            opt.clear_grads();
            Tape<double> tape;
            auto p = tape.parameter(w);
            auto d = add(p, tape.constant({1}, vec({-3})));
            tape.backward(sum(mul(d, d)));
            opt.step();
        }
        CHECK(std::abs(w.value[0] - 3) < 1e-2);
    }
    SUBCASE("missing gradient") {
        Parameter<double> w(Shape{1});
        Adam<double> opt({&w}, 0.1);
        CHECK_THROWS_AS(opt.step(), std::logic_error);
    }
    SUBCASE("deterministic trajectory") {
        auto run = [] {
            Parameter<float> w(Shape{4});
            w.value << 0.5f, -1.f, 2.f, 0.f;
            Adam<float> opt({&w}, 0.05f);
            for (int i = 0; i < 50; ++i) {
                w.grad = w.value.array().sin().matrix();
                opt.step();
            }
            return Vector<float>(w.value);
        };
        CHECK(run() == run());
    }
}
