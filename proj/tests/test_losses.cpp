// Copyright 2026 The dsffseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsffseg/losses.hpp"

#include "helpers.hpp"

#include <cmath>

using namespace dsffseg;

namespace {

double value(const Var& v) { return v.value()[0]; }
Var c(Tensor t) { return Var::constant(std::move(t)); }

} // namespace

TEST_SUITE("losses")
{
    TEST_CASE("bce examples")
    {
        Rng rng(1);
        Tensor gt({3, 3});
        for (Index i = 0; i < 9; ++i) gt[i] = rng.bernoulli(0.5);
        CHECK(std::abs(value(bce_loss(c(Tensor::full({3, 3}, 0.5)), gt, 1e-7)) - std::log(2.0)) < 1e-12);
        CHECK(std::abs(value(bce_loss(c(Tensor({1, 2}, {0.9, 0.1})), Tensor({1, 2}, {1, 0}), 1e-7)) - 0.10536) < 1e-5);
        const double perfect = value(bce_loss(c(Tensor({1, 2}, {1.0, 0.0})), Tensor({1, 2}, {1, 0}), 1e-7));
        CHECK(std::abs(perfect - (-std::log(1.0 - 1e-7))) < 1e-15);
        CHECK_THROWS_AS(bce_loss(c(Tensor::full({2, 2}, 0.5)), Tensor({1, 4}), 1e-7), ShapeError);
    }

    TEST_CASE("dice examples")
    {
        const Tensor gt({2, 2}, {1, 1, 0, 0});
        CHECK(std::abs(value(dice_loss(c(gt), gt, 1e-12))) < 1e-9);
        CHECK(std::abs(value(dice_loss(c(Tensor({2, 2}, {0, 0, 1, 1})), gt, 1e-12)) - 1.0) < 1e-9);
        CHECK(std::abs(value(dice_loss(c(Tensor::full({2, 2}, 0.5)), gt, 0.0)) - 0.5) < 1e-15);
        CHECK_THROWS_AS(dice_loss(c(gt), Tensor({4}), 1.0), ShapeError);
    }

    TEST_CASE("dice stays within [0, 1]")
    {
        Rng rng(2);
        for (int trial = 0; trial < 200; ++trial) {
            const Tensor p = uniform_tensor(rng, {4, 4}, 0.0, 1.0);
            Tensor gt({4, 4});
            for (Index i = 0; i < 16; ++i) gt[i] = rng.bernoulli(0.4);
            const double d = value(dice_loss(c(p), gt, 1.0));
            CHECK(d >= 0.0);
            CHECK(d <= 1.0);
        }
    }

    TEST_CASE("ce examples")
    {
        const int one[] = {1};
        const int zero_one[] = {0, 1};
        CHECK(std::abs(value(ce_loss(c(Tensor({2, 2}, {3, 3, -1, -1})), zero_one)) - std::log(2.0)) < 1e-15);
        CHECK(std::abs(value(ce_loss(c(Tensor({1, 2}, {1, 2})), one)) - 0.3133) < 1e-4);
        double previous = 1.0;
        for (double margin : {1.0, 10.0, 100.0}) {
            const double l = value(ce_loss(c(Tensor({1, 2}, {0, margin})), one));
            CHECK(l < previous);
            previous = l;
        }
        const double huge = value(ce_loss(c(Tensor({1, 2}, {0, 1000.0})), one));
        CHECK(huge >= 0.0);
        CHECK(huge < 1e-300);
        const int bad[] = {2};
        CHECK_THROWS_AS(ce_loss(c(Tensor({1, 2}, {1, 2})), bad), std::out_of_range);
    }

    TEST_CASE("total loss examples")
    {
        const Var t = c(Tensor::scalar(0.3)), m = c(Tensor::scalar(0.7));
        CHECK(std::abs(value(total_loss(t, m, LossConfig{})) - 1.0) < 1e-15);
        LossConfig no_text;
        no_text.lambda_text = 0.0;
        CHECK(value(total_loss(t, m, no_text)) == 0.7);
        LossConfig weighted;
        weighted.lambda_text = 2.0;
        weighted.lambda_mask = 0.5;
        CHECK(value(total_loss(c(Tensor::scalar(1.0)), c(Tensor::scalar(4.0)), weighted)) == 4.0);
    }

    TEST_CASE("bce and dice agree with a per-pixel formula")
    {
        Rng rng(3);
        const Tensor p = uniform_tensor(rng, {3, 5}, 0.01, 0.99);
        Tensor gt({3, 5});
        for (Index i = 0; i < 15; ++i) gt[i] = rng.bernoulli(0.5);
        double bce = 0.0, inter = 0.0, sp = 0.0, sg = 0.0;
        for (Index i = 0; i < 15; ++i) {
            bce -= gt[i] * std::log(p[i]) + (1 - gt[i]) * std::log(1 - p[i]);
            inter += p[i] * gt[i];
            sp += p[i];
            sg += gt[i];
        }
        CHECK(std::abs(value(bce_loss(c(p), gt, 1e-7)) - bce / 15.0) < 1e-14);
        CHECK(std::abs(value(dice_loss(c(p), gt, 1.0)) - (1.0 - (2 * inter + 1.0) / (sp + sg + 1.0))) < 1e-14);
    }
}
