// Copyright 2026 The dsffseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsffseg/train.hpp"

#include "helpers.hpp"

#include <cmath>

using namespace dsffseg;

namespace {

TrainConfig short_config(Index steps)
{
    TrainConfig cfg;
    cfg.steps = steps;
    cfg.batch_size = 4;
    return cfg;
}

std::vector<Tensor> snapshot(const Model& m)
{
    std::vector<Tensor> out;
    for (const auto& [name, v] : model_parameters(m)) out.push_back(v.value());
    return out;
}

double held_out_rej_accuracy(const Model& m, Index n, std::uint64_t seed)
{
    Index correct = 0, total = 0;
    for (Index i = 0; i < n; ++i) {
        const auto s = synth::sample_at(seed, static_cast<std::uint64_t>(i), m.config.data);
        const auto pred = predict(m, s);
        for (std::size_t k = 0; k < pred.rej_flags.size(); ++k) {
            correct += (pred.rej_flags[k] ? 0 : 1) == s.text_target_ids[k];
            ++total;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

} // namespace

TEST_SUITE("train")
{
    TEST_CASE("config json round trip and defaults")
    {
        TrainConfig cfg;
        cfg.steps = 17;
        cfg.learning_rate = 0.125;
        cfg.decoder.variant = Variant::Concat;
        cfg.data.p_empty = 0.5;
        cfg.stub.grounding_gain = 2.5;
        const TrainConfig back = train_config_from_json(to_json(cfg));
        CHECK(to_json(back) == to_json(cfg));
        CHECK(back.decoder.variant == Variant::Concat);

        const TrainConfig partial = train_config_from_json(R"({"steps": 5, "decoder": {"variant": "detail"}})");
        CHECK(partial.steps == 5);
        CHECK(partial.batch_size == 8);
        CHECK(partial.decoder.variant == Variant::DetailOnly);
        CHECK(partial.decoder.c == 32);
        CHECK_THROWS(train_config_from_json(R"({"decoder": {"variant": "fpn"}})"));
    }

    TEST_CASE("config validation")
    {
        TrainConfig cfg;
        CHECK_NOTHROW(cfg.validate());
        cfg.batch_size = 0;
        CHECK_THROWS(cfg.validate());
        cfg = TrainConfig{};
        cfg.data.image_size = 32;
        CHECK_THROWS(cfg.validate());
        cfg = TrainConfig{};
        cfg.data.max_objects = 4;
        CHECK_THROWS(cfg.validate());
    }

    TEST_CASE("adam first step moves each weight by the learning rate")
    {
        Var w = Var::leaf(Tensor({3}, {1.0, -2.0, 0.5}));
        Adam opt({w}, 0.1, 0.9, 0.999, 1e-8);
        Tape tape;
        Var loss;
        {
            Tape::Recording rec(tape);
            loss = sum(mul(w, Var::constant(Tensor({3}, {3.0, -0.5, 0.0}))));
        }
        tape.backward(loss);
        opt.step();
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        CHECK(std::abs(w.value()[0] - (1.0 - 0.1 * 3.0 / (3.0 + 1e-8))) < 1e-15);
        CHECK(std::abs(w.value()[1] - (-2.0 + 0.1 * 0.5 / (0.5 + 1e-8))) < 1e-15);
        CHECK(w.value()[2] == 0.5);
        opt.zero_grad();
        CHECK((w.grad().array() == 0.0).all());
    }

    TEST_CASE("rej head conventions")
    {
        CHECK(rej_flags(Tensor({3, 2}, {1.0, 0.0, 0.0, 1.0, 0.5, 0.5})) == std::vector<bool>{true, false, false});
        const auto zero = nn::make_zero_linear(4, 2);
        const Tensor logits = rej_head(Var::constant(Tensor::full({2, 4}, 0.3)), zero).value();
        const int targets[] = {0, 1};
        CHECK(std::abs(ce_loss(Var::constant(logits), targets).value()[0] - std::log(2.0)) < 1e-15);
    }

    TEST_CASE("sample loss is mask-free for no-target samples")
    {
        const Model m = init_model(TrainConfig{});
        synth::GenConfig g;
        g.p_empty = 1.0;
        const auto s = synth::sample_at(1, 0, g);
        REQUIRE(s.no_target);
        const auto l = sample_loss(m, synth::featurize(s, m.stub), s);
        CHECK(l.mask.value()[0] == 0.0);
        CHECK(l.total.value()[0] == l.text.value()[0]);
    }

    TEST_CASE("zero learning rate leaves every parameter untouched")
    {
        TrainConfig cfg = short_config(3);
        cfg.learning_rate = 0.0;
        const auto before = snapshot(init_model(cfg));
        const auto result = train(cfg);
        CHECK(snapshot(result.model) == before);
        // Each step's loss is the untrained model's loss on that step's batch.
        const Model fresh = init_model(cfg);
        double first = 0.0;
        for (Index b = 0; b < cfg.batch_size; ++b) {
            const auto s = synth::sample_at(cfg.seed, static_cast<std::uint64_t>(b), cfg.data);
            first += sample_loss(fresh, synth::featurize(s, fresh.stub), s).total.value()[0] / 4.0;
        }
        CHECK(std::abs(result.curve[0].loss - first) < 1e-12);
    }

    TEST_CASE("short runs are reproducible and lower the loss")
    {
        const TrainConfig cfg = short_config(60);
        const auto a = train(cfg), b = train(cfg);
        CHECK(curve_to_csv(a.curve) == curve_to_csv(b.curve));
        CHECK(to_json(evaluate(a.model, 40, 43)) == to_json(evaluate(b.model, 40, 43)));
        double head = 0.0, tail = 0.0;
        for (int i = 0; i < 10; ++i) {
            head += a.curve[static_cast<std::size_t>(i)].loss;
            tail += a.curve[a.curve.size() - 1 - static_cast<std::size_t>(i)].loss;
        }
        CHECK(tail < head);
    }

    TEST_CASE("curve csv layout")
    {
        const std::vector<LossPoint> curve{{0, 1.5, 0.5, 1.0}, {1, 0.25, 0.125, 0.125}};
        CHECK(curve_to_csv(curve) == "step,loss,text_loss,mask_loss\n0,1.5,0.5,1\n1,0.25,0.125,0.125\n");
    }

    TEST_CASE("non-finite loss aborts naming the step")
    {
        TrainConfig cfg = short_config(5);
        cfg.learning_rate = 1e300;
        try {
            train(cfg);
            FAIL("expected divergence");
        } catch (const std::runtime_error& e) {
            CHECK(std::string(e.what()).find("step") != std::string::npos);
        }
    }

    TEST_CASE("checkpoint round trip")
    {
        TrainConfig cfg = short_config(2);
        cfg.decoder.variant = Variant::Concat;
        const auto trained = train(cfg).model;
        const std::string bytes = encode_checkpoint(trained);
        CHECK(bytes.substr(0, 8) == "DSFFCKPT");
        const Model back = decode_checkpoint(bytes);
        CHECK(to_json(back.config) == to_json(trained.config));
        CHECK(snapshot(back) == snapshot(trained));
        CHECK(encode_checkpoint(back) == bytes);
        CHECK(to_json(evaluate(back, 10, 7)) == to_json(evaluate(trained, 10, 7)));
    }

    TEST_CASE("corrupt or mismatched checkpoints are rejected")
    {
        const Model m = init_model(short_config(1));
        std::string bytes = encode_checkpoint(m);
        std::string bad_magic = bytes;
        bad_magic[0] = 'X';
        CHECK_THROWS(decode_checkpoint(bad_magic));
        std::string bad_version = bytes;
        bad_version[8] = 2;
        CHECK_THROWS(decode_checkpoint(bad_version));
        CHECK_THROWS(decode_checkpoint(bytes.substr(0, bytes.size() - 8)));

        // A manifest claiming a different variant no longer matches the stored tensors.
        const std::string from = "\"variant\":\"dsff\"", to = "\"variant\":\"detail\"";
        const auto pos = bytes.find(from);
        REQUIRE(pos != std::string::npos);
        std::string swapped = bytes;
        swapped.replace(pos, from.size(), to);
        const std::uint64_t len = swapped.size() - bytes.size();
        std::uint64_t manifest_len = 0;
        for (int i = 0; i < 8; ++i) manifest_len |= std::uint64_t{static_cast<unsigned char>(bytes[12 + i])} << (8 * i);
        manifest_len += len;
        for (int i = 0; i < 8; ++i) swapped[12 + i] = static_cast<char>((manifest_len >> (8 * i)) & 0xFF);
        CHECK_THROWS(decode_checkpoint(swapped));
    }

    TEST_CASE("evaluation of an all-empty predictor")
    {
        synth::GenConfig g;
        g.p_empty = 0.5;
        std::vector<EvalRecord> rs;
        Index empties = 0;
        for (std::uint64_t i = 0; i < 400; ++i) {
            const auto s = synth::sample_at(11, i, g);
            empties += s.no_target;
            rs.push_back({Mask::Zero(64, 64), s.target_union(), s.no_target, true});
        }
        const auto r = score(rs);
        CHECK(*r.n_acc == 1.0);
        CHECK(*r.giou == static_cast<double>(empties) / 400.0);
        CHECK(*r.giou == doctest::Approx(0.5).epsilon(0.1));
    }

    TEST_CASE("evaluation of a ground-truth oracle")
    {
        std::vector<EvalRecord> rs;
        for (std::uint64_t i = 0; i < 100; ++i) {
            const auto s = synth::sample_at(12, i, synth::GenConfig{});
            rs.push_back({s.target_union(), s.target_union(), s.no_target, s.no_target});
        }
        const auto r = score(rs);
        CHECK(*r.ciou == 1.0);
        CHECK(*r.giou == 1.0);
        CHECK(*r.prec05 == 1.0);
        CHECK(*r.n_acc == 1.0);
    }
}

TEST_SUITE("train-reference")
{
    TEST_CASE("reference run beats the untrained decoder and learns rejection")
    {
        const TrainConfig cfg;
        const MetricsReport untrained = evaluate(init_model(cfg), 200, cfg.seed + 1);
        const auto result = train(cfg);
        const MetricsReport trained = evaluate(result.model, 200, cfg.seed + 1);
        MESSAGE("untrained gIoU " << *untrained.giou << ", trained gIoU " << *trained.giou);
        CHECK(*trained.giou - *untrained.giou >= 0.3);
        CHECK(held_out_rej_accuracy(result.model, 200, cfg.seed + 1) > 0.9);
        CHECK(trained.n_acc.has_value());
    }
}
