// Copyright 2026 The dsffseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsffseg/gradcheck.hpp"

#include "dsffseg/decoder.hpp"
#include "dsffseg/dsff.hpp"
#include "dsffseg/losses.hpp"
#include "dsffseg/nn.hpp"

#include <algorithm>
#include <stdexcept>

namespace dsffseg {

namespace {

double probe_sum(const Var& out, const Tensor& probe) { return out.value().data().dot(probe.data()); }

Var rand_leaf(Rng& rng, Dims dims, double lo = -1.0, double hi = 1.0)
{
    return Var::leaf(uniform_tensor(rng, std::move(dims), lo, hi));
}

std::vector<Var> leaves_of(std::initializer_list<const nn::LinearParams*> ps)
{
    std::vector<Var> out;
    for (const auto* p : ps) {
        out.push_back(p->weight);
        out.push_back(p->bias);
    }
    return out;
}

void append(std::vector<Var>& dst, const std::vector<Var>& src) { dst.insert(dst.end(), src.begin(), src.end()); }

std::vector<Var> attention_leaves(const nn::AttentionParams& a) { return leaves_of({&a.wq, &a.wk, &a.wv, &a.wout}); }

// Random biases so zero-initialized layers still exercise their gradients.
void randomize_bias(nn::LinearParams& p, Rng& rng) { p.bias.mutable_value() = uniform_tensor(rng, p.bias.dims(), -0.5, 0.5); }

GradCase make_case(const std::string& op, Rng& rng)
{
    if (op == "matmul") {
        Var a = rand_leaf(rng, {3, 4}), b = rand_leaf(rng, {4, 2});
        return {{a, b}, [=] { return matmul(a, b); }};
    }
    if (op == "softmax") {
        Var a = rand_leaf(rng, {3, 5}, -2.0, 2.0);
        return {{a}, [=] { return softmax_rows(a); }};
    }
    if (op == "sigmoid") {
        Var a = rand_leaf(rng, {2, 6}, -4.0, 4.0);
        return {{a}, [=] { return sigmoid(a); }};
    }
    if (op == "linear") {
        Var x = rand_leaf(rng, {3, 4});
        auto p = nn::make_linear(rng, 4, 3);
        randomize_bias(p, rng);
        return {{x, p.weight, p.bias}, [=] { return nn::linear(x, p); }};
    }
    if (op == "conv2d") {
        Var x = rand_leaf(rng, {2, 4, 4});
        auto p = nn::make_conv2d(rng, 2, 3, 3);
        p.bias.mutable_value() = uniform_tensor(rng, p.bias.dims(), -0.5, 0.5);
        return {{x, p.weight, p.bias}, [=] { return nn::conv2d_same(x, p); }};
    }
    if (op == "pixel_shuffle") {
        Var x = rand_leaf(rng, {8, 2, 3});
        return {{x}, [=] { return nn::pixel_shuffle(x, 2); }};
    }
    if (op == "bilinear_sample") {
        Var x = rand_leaf(rng, {2, 3, 4});
        // Coordinates span the interior and both clamped borders.
        Var coords = Var::leaf(Tensor({2, 3, 3}, Eigen::VectorXd::Zero(18)));
        auto& c = coords.mutable_value().data();
        for (Index i = 0; i < 9; ++i) {
            c[i] = rng.uniform(-0.8, 2.8);
            c[9 + i] = rng.uniform(-0.8, 3.8);
        }
        return {{x, coords}, [=] { return nn::bilinear_sample(x, nn::SampleGrid{coords}); }};
    }
    if (op == "dynamic_upsample") {
        Var x = rand_leaf(rng, {2, 3, 3});
        auto proj = nn::make_linear(rng, 2, 8);
        randomize_bias(proj, rng);
        return {{x, proj.weight, proj.bias}, [=] { return nn::dynamic_upsample(x, proj, kReferenceScopeFactor); }};
    }
    if (op == "cross_attention") {
        Var q = rand_leaf(rng, {3, 4}), kv = rand_leaf(rng, {2, 4});
        auto p = nn::make_attention(rng, 4, 4);
        for (auto* l : {&p.wq, &p.wk, &p.wv, &p.wout}) randomize_bias(*l, rng);
        // Mixing the weights into the output probes d(attn) as well.
        const Var mix = Var::constant(uniform_tensor(rng, {2, 4}, -1.0, 1.0));
        std::vector<Var> leaves{q, kv};
        append(leaves, attention_leaves(p));
        return {leaves, [=] {
                    const auto a = nn::cross_attention(q, kv, p);
                    return add(a.out, matmul(a.attn, mix));
                }};
    }
    if (op == "dsff_forward") {
        Var detail = rand_leaf(rng, {2, 4, 4}), semantic = rand_leaf(rng, {2, 2, 2});
        auto p = make_dsff(rng, 2, 2);
        p.offset_proj = nn::make_linear(rng, 2, 8);
        randomize_bias(p.offset_proj, rng);
        std::vector<Var> leaves{detail, semantic};
        append(leaves, attention_leaves(p.attn));
        append(leaves, leaves_of({&p.offset_proj, &p.compress}));
        const Var mix = Var::constant(uniform_tensor(rng, {4, 2}, -1.0, 1.0));
        return {leaves, [=] {
                    const auto o = dsff_forward(detail, semantic, p);
                    return add(reshape(o.t0_ds, {2, 16}), matmul(transpose(mix), reshape(o.attn_map, {4, 16})));
                }};
    }
    if (op == "inject_seg") {
        DecoderConfig cfg;
        cfg.c_llm = 4;
        cfg.c = 3;
        cfg.grid_detail = {4, 4};
        cfg.grid_semantic = {2, 2};
        cfg.head_mid_channels = 4;
        cfg.final_mask_hw = {8, 8};
        cfg.variant = Variant::DetailOnly;
        auto p = build_variant(cfg, rng);
        for (auto* l : {&p.seg_attn.wq, &p.seg_attn.wk, &p.seg_attn.wv, &p.seg_attn.wout}) randomize_bias(*l, rng);
        Var t0 = rand_leaf(rng, {3, 4, 4}), seg = rand_leaf(rng, {2, 3});
        std::vector<Var> leaves{t0, seg};
        append(leaves, attention_leaves(p.seg_attn));
        return {leaves, [=] {
                    const auto maps = inject_seg(t0, seg, p);
                    return concat_channels(maps);
                }};
    }
    if (op == "mask_head") {
        DecoderConfig cfg;
        cfg.c_llm = 8;
        cfg.c = 8;
        cfg.head_mid_channels = 16;
        cfg.final_mask_hw = {32, 32};
        cfg.variant = Variant::DetailOnly;
        auto p = build_variant(cfg, rng);
        p.head_k3.bias.mutable_value() = uniform_tensor(rng, p.head_k3.bias.dims(), -0.5, 0.5);
        p.head_k5.bias.mutable_value() = uniform_tensor(rng, p.head_k5.bias.dims(), -0.5, 0.5);
        Var t1 = rand_leaf(rng, {8, 8, 8});
        const GridSize hw = cfg.final_mask_hw;
        return {{t1, p.head_k3.weight, p.head_k3.bias, p.head_k5.weight, p.head_k5.bias},
                [=] { return mask_head(t1, p, hw); }};
    }
    if (op == "bce_loss" || op == "dice_loss") {
        Var probs = rand_leaf(rng, {4, 5}, 0.05, 0.95);
        Tensor gt = Tensor::zeros({4, 5});
        for (Index i = 0; i < gt.size(); ++i) gt[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        if (op == "bce_loss") return {{probs}, [=] { return bce_loss(probs, gt, 1e-7); }};
        return {{probs}, [=] { return dice_loss(probs, gt, 1.0); }};
    }
    if (op == "ce_loss") {
        Var logits = rand_leaf(rng, {3, 2}, -2.0, 2.0);
        std::vector<int> targets;
        for (int i = 0; i < 3; ++i) targets.push_back(static_cast<int>(rng.below(2)));
        return {{logits}, [=] { return ce_loss(logits, targets); }};
    }
    throw std::invalid_argument("gradcheck: unknown op " + op);
}

} // namespace

double gradcheck_case(const GradCase& c, Rng& rng, double eps)
{
    Tensor probe;
    Tape tape;
    Var loss;
    {
        Tape::Recording rec(tape);
        const Var out = c.forward();
        probe = uniform_tensor(rng, out.dims(), -1.0, 1.0);
        loss = sum(mul(out, Var::constant(probe)));
    }
    for (auto leaf : c.leaves) leaf.zero_grad();
    tape.backward(loss);

    double worst = 0.0;
    for (auto leaf : c.leaves) {
        const Eigen::VectorXd analytic = leaf.grad();
        const Tensor original = leaf.value();
        const Tensor numeric = finite_diff_grad(
            [&](const Tensor& x) {
                leaf.mutable_value() = x;
                return probe_sum(c.forward(), probe);
            },
            original, eps);
        leaf.mutable_value() = original;
        worst = std::max(worst, max_relative_error(analytic, numeric.data()));
    }
    return worst;
}

std::vector<std::string> gradcheck_ops()
{
    return {"matmul",        "softmax",         "sigmoid",      "linear",     "conv2d",
            "pixel_shuffle", "bilinear_sample", "dynamic_upsample", "cross_attention", "dsff_forward",
            "inject_seg",    "mask_head",       "bce_loss",     "dice_loss",  "ce_loss"};
}

std::vector<GradCheckResult> run_gradcheck(std::uint64_t seed, int instances, double eps)
{
    std::vector<GradCheckResult> results;
    const auto ops = gradcheck_ops();
    for (std::size_t k = 0; k < ops.size(); ++k) {
        for (int i = 0; i < instances; ++i) {
            Rng rng = Rng(seed).fork(k * 1000 + static_cast<std::uint64_t>(i));
            const GradCase c = make_case(ops[k], rng);
            results.push_back({ops[k], i, gradcheck_case(c, rng, eps)});
        }
    }
    return results;
}

} // namespace dsffseg
