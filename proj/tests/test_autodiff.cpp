// Copyright 2026 The dsffseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsffseg/autodiff.hpp"

#include "helpers.hpp"

#include <cmath>

using namespace dsffseg;
using dsffseg::test::check_close;
using dsffseg::test::max_abs_diff;
using dsffseg::test::vec;

namespace {

// Independent reverse-mode check: central differences on a scalar function of one leaf.
double grad_error(const std::function<Var(const Var&)>& f, const Tensor& x0)
{
    Var x = Var::leaf(x0);
    Tape tape;
    Var loss;
    {
        Tape::Recording rec(tape);
        loss = f(x);
    }
    tape.backward(loss);
    const Tensor numeric =
        finite_diff_grad([&](const Tensor& x1) { return f(Var::constant(x1)).value()[0]; }, x0, 1e-5);
    return max_relative_error(x.grad(), numeric.data());
}

} // namespace

TEST_SUITE("autodiff")
{
    TEST_CASE("matmul examples")
    {
        const Var id = Var::constant(Tensor({2, 2}, {1, 0, 0, 1}));
        const Var b = Var::constant(Tensor({2, 2}, {3, 4, 5, 6}));
        check_close(matmul(id, b).value(), {3, 4, 5, 6}, 0.0);
        check_close(matmul(Var::constant(Tensor({1, 2}, {1, 2})), Var::constant(Tensor({2, 1}, {3, 4}))).value(), {11},
                    0.0);
        check_close(matmul(Var::constant(Tensor::zeros({2, 2})), b).value(), {0, 0, 0, 0}, 0.0);
    }

    TEST_CASE("matmul shape error names both shapes")
    {
        const Var a = Var::constant(Tensor::zeros({2, 3}));
        const Var b = Var::constant(Tensor::zeros({2, 3}));
        try {
            matmul(a, b);
            FAIL("expected ShapeError");
        } catch (const ShapeError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("2x3") != std::string::npos);
        }
    }

    TEST_CASE("softmax examples")
    {
        check_close(softmax_rows(Var::constant(Tensor({1, 2}, {0, 0}))).value(), {0.5, 0.5}, 1e-15);
        check_close(softmax_rows(Var::constant(Tensor({1, 2}, {1, 2}))).value(), {0.26894, 0.73106}, 1e-5);
        const Tensor big = softmax_rows(Var::constant(Tensor({1, 2}, {1000, 1000}))).value();
        CHECK(big.all_finite());
        check_close(big, {0.5, 0.5}, 1e-15);
    }

    TEST_CASE("softmax rows sum to one and ignore row shifts")
    {
        Rng rng(11);
        for (int trial = 0; trial < 20; ++trial) {
            const Tensor x = uniform_tensor(rng, {4, 7}, -5.0, 5.0);
            Tensor shifted = x;
            for (Index c = 0; c < 7; ++c) shifted.matrix()(2, c) += 3.25;
            const Tensor s = softmax_rows(Var::constant(x)).value();
            for (Index r = 0; r < 4; ++r) CHECK(std::abs(s.matrix().row(r).sum() - 1.0) < 1e-12);
            CHECK(max_abs_diff(s, softmax_rows(Var::constant(shifted)).value()) < 1e-14);
        }
    }

    TEST_CASE("elementwise examples")
    {
        check_close(sigmoid(Var::constant(vec({0}))).value(), {0.5}, 0.0);
        check_close(add(Var::constant(vec({1, 2})), Var::constant(vec({3, 4}))).value(), {4, 6}, 0.0);
        check_close(scale(Var::constant(vec({2, 4})), 0.25).value(), {0.5, 1.0}, 0.0);
        check_close(sub(Var::constant(vec({5, 2})), Var::constant(vec({3, 4}))).value(), {2, -2}, 0.0);
        check_close(mul(Var::constant(vec({5, 2})), Var::constant(vec({3, 4}))).value(), {15, 8}, 0.0);
        CHECK_THROWS_AS(add(Var::constant(vec({1, 2})), Var::constant(vec({1, 2, 3}))), ShapeError);
        CHECK_THROWS(log(Var::constant(vec({1.0, 0.0}))));
    }

    TEST_CASE("sigmoid is finite at extreme inputs")
    {
        const Tensor s = sigmoid(Var::constant(vec({-800, 800}))).value();
        CHECK(s.all_finite());
        CHECK(s[0] == 0.0);
        CHECK(s[1] == 1.0);
    }

    TEST_CASE("concat_channels ordering, identity and slice round trip")
    {
        const Var a = Var::constant(Tensor({2, 1, 1}, {1, 2}));
        const Var b = Var::constant(Tensor({3, 1, 1}, {3, 4, 5}));
        const Var ab[] = {a, b};
        const Tensor cat = concat_channels(ab).value();
        CHECK(cat.dims() == Dims{5, 1, 1});
        check_close(cat, {1, 2, 3, 4, 5}, 0.0);
        const Var one[] = {a};
        CHECK(concat_channels(one).value() == a.value());
        CHECK(slice_channels(Var::constant(cat), 0, 2).value() == a.value());
        CHECK(slice_channels(Var::constant(cat), 2, 3).value() == b.value());
        const Var bad[] = {a, Var::constant(Tensor::zeros({1, 2, 1}))};
        CHECK_THROWS_AS(concat_channels(bad), ShapeError);
    }

    TEST_CASE("concat gradient of a sum routes ones to both inputs")
    {
        Var a = Var::leaf(Tensor({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}));
        Var b = Var::leaf(Tensor({1, 2, 2}, {1, 1, 1, 1}));
        Tape tape;
        Var loss;
        {
            Tape::Recording rec(tape);
            const Var xs[] = {a, b};
            loss = sum(concat_channels(xs));
        }
        tape.backward(loss);
        CHECK((a.grad().array() == 1.0).all());
        CHECK((b.grad().array() == 1.0).all());
    }

    TEST_CASE("backward examples")
    {
        Var x = Var::leaf(vec({1, 2, 3}));
        Var unused = Var::leaf(vec({7, 8}));
        Tape tape;
        Var loss;
        {
            Tape::Recording rec(tape);
            loss = sum(mul(x, x));
        }
        tape.backward(loss);
        check_close(x.grad_tensor(), {2, 4, 6}, 0.0);
        CHECK((unused.grad().array() == 0.0).all());

        Var y = Var::leaf(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
        Tape t2;
        {
            Tape::Recording rec(t2);
            loss = sum(y);
        }
        t2.backward(loss);
        CHECK((y.grad().array() == 1.0).all());
    }

    TEST_CASE("backward rejects non-scalar loss")
    {
        Var x = Var::leaf(vec({1, 2}));
        Tape tape;
        Var out;
        {
            Tape::Recording rec(tape);
            out = scale(x, 2.0);
        }
        CHECK_THROWS_AS(tape.backward(out), ShapeError);
    }

    TEST_CASE("shared subexpression accumulates gradient once per use")
    {
        Var x = Var::leaf(vec({2.0}));
        Tape tape;
        Var loss;
        {
            Tape::Recording rec(tape);
            const Var y = mul(x, x); // x^2
            loss = sum(add(y, mul(y, x))); // x^2 + x^3
        }
        tape.backward(loss);
        CHECK(x.grad()[0] == doctest::Approx(2 * 2.0 + 3 * 4.0));
    }

    TEST_CASE("ops outside a recording scope are constants")
    {
        Var x = Var::leaf(vec({1, 2}));
        const Var y = scale(x, 3.0);
        CHECK_FALSE(y.requires_grad());
        Tape tape;
        {
            Tape::Recording rec(tape);
            const Var z = scale(x, 3.0);
            CHECK(z.requires_grad());
        }
        CHECK(tape.size() == 1);
    }

    TEST_CASE("finite_diff_grad examples")
    {
        Rng rng(3);
        const Tensor x = uniform_tensor(rng, {2, 3}, -1.0, 1.0);
        const Tensor g = finite_diff_grad([](const Tensor& t) { return t.data().sum(); }, x, 1e-5);
        CHECK((g.data().array() - 1.0).abs().maxCoeff() < 1e-9);
        const Tensor sq = finite_diff_grad([](const Tensor& t) { return t[0] * t[0]; }, vec({3.0}), 1e-5);
        CHECK(std::abs(sq[0] - 6.0) < 1e-6);
    }

    TEST_CASE("three-layer random composite agrees with finite differences")
    {
        for (std::uint64_t seed : {1u, 2u, 3u}) {
            Rng rng(seed);
            const Tensor w1 = uniform_tensor(rng, {4, 5}, -1.0, 1.0);
            const Tensor w2 = uniform_tensor(rng, {5, 3}, -1.0, 1.0);
            const Tensor w3 = uniform_tensor(rng, {3, 2}, -1.0, 1.0);
            const Tensor x0 = uniform_tensor(rng, {2, 4}, -1.0, 1.0);
            const auto f = [&](const Var& x) {
                const Var h1 = sigmoid(matmul(x, Var::constant(w1)));
                const Var h2 = softmax_rows(matmul(h1, Var::constant(w2)));
                return sum(mul(matmul(h2, Var::constant(w3)), matmul(h2, Var::constant(w3))));
            };
            CHECK(grad_error(f, x0) < 1e-4);
        }
    }

    TEST_CASE("remaining elementwise ops agree with finite differences")
    {
        Rng rng(17);
        const Tensor pos = uniform_tensor(rng, {3, 3}, 0.2, 2.0);
        CHECK(grad_error([](const Var& x) { return sum(log(x)); }, pos) < 1e-4);
        CHECK(grad_error([](const Var& x) { return mean(mul(x, add_scalar(x, 1.5))); }, pos) < 1e-4);
        CHECK(grad_error([](const Var& x) { return sum(sub(scale(x, 2.0), mul(x, x))); }, pos) < 1e-4);
        CHECK(grad_error([](const Var& x) { return sum(mul(transpose(x), transpose(x))); }, pos) < 1e-4);
        CHECK(grad_error([](const Var& x) { return sum(mul(slice_rows(x, 1, 2), slice_rows(x, 1, 2))); }, pos) < 1e-4);
        const Index idx[] = {4, 0, 4, 8};
        CHECK(grad_error([&](const Var& x) { return sum(mul(gather(x, idx), gather(x, idx))); }, pos) < 1e-4);
    }

    TEST_CASE("clamp passes gradient only inside the interval")
    {
        Var x = Var::leaf(vec({-2.0, 0.5, 3.0}));
        Tape tape;
        Var loss;
        {
            Tape::Recording rec(tape);
            loss = sum(clamp(x, 0.0, 1.0));
        }
        tape.backward(loss);
        check_close(x.grad_tensor(), {0.0, 1.0, 0.0}, 0.0);
    }

    TEST_CASE("max_relative_error uses a floor for tiny magnitudes")
    {
        Eigen::VectorXd a(2), b(2);
        a << 1.0, 1e-9;
        b << 1.0 + 1e-6, 2e-9;
        CHECK(max_relative_error(a, b) == doctest::Approx(1e-6).epsilon(1e-6));
    }
}
