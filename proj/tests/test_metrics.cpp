// Copyright 2026 The dsffseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsffseg/metrics.hpp"

#include "doctest.h"
#include "oracles.hpp"

#include <vector>

using namespace dsffseg;
using dsffseg::test::oracle;

namespace {

Mask mask_from(Index h, Index w, std::initializer_list<std::pair<Index, Index>> on)
{
    Mask m = Mask::Zero(h, w);
    for (auto [y, x] : on) m(y, x) = 1;
    return m;
}

EvalRecord record(Mask pred, Mask gt, bool gt_empty = false, bool pred_empty = false)
{
    return {std::move(pred), std::move(gt), gt_empty, pred_empty};
}

Mask random_mask(Rng& rng, Index h, Index w, double density)
{
    Mask m(h, w);
    for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) m(y, x) = rng.bernoulli(density) ? 1 : 0;
    return m;
}

} // namespace

TEST_SUITE("metrics")
{
    TEST_CASE("ciou examples")
    {
        const Mask gt = Mask::Ones(2, 2);
        const std::vector<EvalRecord> same{record(gt, gt)};
        CHECK(*ciou(same) == 1.0);
        const std::vector<EvalRecord> half{record(mask_from(2, 2, {{0, 0}, {0, 1}}), gt)};
        CHECK(*ciou(half) == 0.5);
        // I = 1 + 4, U = 4 + 4 for the pair below; the per-record mean would be 0.625.
        const std::vector<EvalRecord> two{record(mask_from(2, 2, {{0, 0}}), gt), record(Mask::Ones(2, 2), gt)};
        CHECK(*ciou(two) == 5.0 / 8.0);
        const std::vector<EvalRecord> asym{record(mask_from(1, 1, {{0, 0}}), Mask::Ones(1, 1)),
                                           record(mask_from(4, 4, {{0, 0}}), Mask::Ones(4, 4))};
        CHECK(*ciou(asym) == 2.0 / 17.0);
        CHECK(giou(asym) == (1.0 + 1.0 / 16.0) / 2.0);
        CHECK_THROWS_AS(ciou(std::vector<EvalRecord>{}), std::invalid_argument);
    }

    TEST_CASE("giou examples")
    {
        const Mask gt = Mask::Ones(2, 2);
        const std::vector<EvalRecord> perfect{record(gt, gt), record(gt, gt)};
        CHECK(giou(perfect) == 1.0);
        const std::vector<EvalRecord> mixed{record(gt, gt), record(Mask::Zero(2, 2), gt)};
        CHECK(giou(mixed) == 0.5);
        const std::vector<EvalRecord> empty_ok{record(Mask::Zero(2, 2), Mask::Zero(2, 2), true, true)};
        CHECK(giou(empty_ok) == 1.0);
        CHECK_THROWS_AS(giou(std::vector<EvalRecord>{}), std::invalid_argument);
    }

    TEST_CASE("gres_adjust rules")
    {
        const auto ok = gres_adjust(record(Mask::Zero(3, 3), Mask::Zero(3, 3), true, true));
        CHECK(ok.giou == 1.0);
        CHECK_FALSE(ok.in_ciou);

        Mask fp = Mask::Zero(3, 3);
        fp.row(0).setOnes();
        fp(1, 0) = fp(1, 1) = 1;
        const auto bad = gres_adjust(record(fp, Mask::Zero(3, 3), true, false));
        CHECK(bad.giou == 0.0);
        CHECK(bad.in_ciou);
        CHECK(bad.union_ == 5);
        CHECK(bad.intersection == 0);

        const auto normal = gres_adjust(record(mask_from(2, 2, {{0, 0}}), mask_from(2, 2, {{0, 0}, {1, 1}})));
        CHECK(normal.giou == 0.5);
        CHECK(normal.intersection == 1);
        CHECK(normal.union_ == 2);
    }

    TEST_CASE("only correct no-target records leave cIoU undefined")
    {
        const std::vector<EvalRecord> rs{record(Mask::Zero(2, 2), Mask::Zero(2, 2), true, true),
                                         record(Mask::Zero(2, 2), Mask::Zero(2, 2), true, true)};
        CHECK_FALSE(ciou(rs).has_value());
        CHECK(giou(rs) == 1.0);
        CHECK(*n_acc(rs) == 1.0);
        const auto report = score(rs);
        CHECK(to_json(report).find("ciou") == std::string::npos);
    }

    TEST_CASE("n_acc examples")
    {
        const Mask z = Mask::Zero(2, 2), o = Mask::Ones(2, 2);
        const std::vector<EvalRecord> half{record(z, z, true, true), record(o, z, true, false), record(o, o)};
        CHECK(*n_acc(half) == 0.5);
        const std::vector<EvalRecord> none{record(o, o)};
        CHECK_FALSE(n_acc(none).has_value());
    }

    TEST_CASE("mask_to_bbox examples")
    {
        CHECK(*mask_to_bbox(mask_from(6, 6, {{3, 2}})) == BBox{2, 3, 2, 3});
        CHECK_FALSE(mask_to_bbox(Mask::Zero(4, 4)).has_value());
        CHECK(*mask_to_bbox(mask_from(8, 8, {{0, 0}, {4, 5}})) == BBox{0, 0, 5, 4});
    }

    TEST_CASE("box IoU and Prec@0.5 examples")
    {
        const BBox a{0, 0, 3, 3};
        CHECK(box_iou(a, a) == 1.0);
        const BBox shifted{2, 0, 5, 3}; // equal size, half overlap
        CHECK(box_iou(a, shifted) == doctest::Approx(1.0 / 3.0));
        const BBox half{0, 0, 1, 3}; // IoU exactly 0.5
        CHECK(box_iou(a, half) == 0.5);
        const std::vector<BoxPair> pairs{{a, a}, {a, shifted}, {a, half}, {a, std::nullopt}};
        CHECK(prec_at_05(pairs) == 0.25);
        CHECK_THROWS_AS(prec_at_05(std::vector<BoxPair>{}), std::invalid_argument);
    }

    TEST_CASE("a single normal record gives equal cIoU and gIoU")
    {
        Rng rng(1);
        for (int trial = 0; trial < 50; ++trial) {
            const std::vector<EvalRecord> rs{record(random_mask(rng, 6, 6, 0.5), random_mask(rng, 6, 6, 0.5))};
            if (!ciou(rs)) continue;
            CHECK(*ciou(rs) == giou(rs));
        }
    }

    TEST_CASE("all metrics match the brute-force oracle on random masks")
    {
        Rng rng(2024);
        for (int trial = 0; trial < 200; ++trial) {
            const Index h = 1 + static_cast<Index>(rng.below(8)), w = 1 + static_cast<Index>(rng.below(8));
            std::vector<EvalRecord> rs;
            const int n = 1 + static_cast<int>(rng.below(6));
            for (int k = 0; k < n; ++k) {
                const bool gt_empty = rng.bernoulli(0.3);
                const bool pred_empty = rng.bernoulli(0.3);
                Mask gt = gt_empty ? Mask::Zero(h, w) : random_mask(rng, h, w, rng.uniform());
                Mask pred = pred_empty ? Mask::Zero(h, w) : random_mask(rng, h, w, rng.uniform());
                rs.push_back(record(pred, gt, gt_empty, pred_empty));
            }
            const auto got = score(rs);
            const auto want = oracle(rs);
            CHECK(got.ciou == want.ciou);
            CHECK(*got.giou == want.giou);
            CHECK(got.prec05 == want.prec05);
            CHECK(got.n_acc == want.n_acc);
        }
    }

    TEST_CASE("report json round trip and key set")
    {
        MetricsReport r;
        r.ciou = 0.25;
        r.giou = 0.5;
        r.n_acc = 1.0;
        const std::string text = to_json(r);
        CHECK(text.find("prec05") == std::string::npos);
        const auto back = metrics_from_json(text);
        CHECK(back.ciou == r.ciou);
        CHECK(back.giou == r.giou);
        CHECK_FALSE(back.prec05.has_value());
        CHECK(back.n_acc == r.n_acc);
    }
}
