// Copyright 2026 The dsffseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dsffseg/decoder.hpp"
#include "dsffseg/losses.hpp"
#include "dsffseg/metrics.hpp"
#include "dsffseg/synth.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dsffseg {

struct TrainConfig {
    Index steps = 2000;
    Index batch_size = 8;
    double learning_rate = 1e-3;
    std::uint64_t seed = 42;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    LossConfig loss;
    DecoderConfig decoder;
    synth::GenConfig data;
    synth::StubConfig stub;

    void validate() const;
};

/// JSON text with the same field names as the structs; missing keys keep defaults.
TrainConfig train_config_from_json(const std::string& text);
std::string to_json(const TrainConfig& cfg);
TrainConfig load_train_config(const std::filesystem::path& path);

/// Decoder plus the [REJ]/[SEG] classifier and the frozen stubs it was trained with.
struct Model {
    TrainConfig config;
    DecoderParams decoder;
    nn::LinearParams rej_head; // c -> 2, class 0 = [REJ], class 1 = [SEG]
    synth::StubModel stub;
};

Model init_model(const TrainConfig& cfg);

/// All trainable tensors, decoder first, then rej_head.
std::vector<std::pair<std::string, Var>> model_parameters(const Model& m);

Var rej_head(const Var& t1_seg, const nn::LinearParams& p);
/// [REJ] iff logit 0 strictly beats logit 1; ties go to [SEG].
std::vector<bool> rej_flags(const Tensor& logits);

struct LossPoint {
    Index step = 0;
    double loss = 0.0;
    double text_loss = 0.0;
    double mask_loss = 0.0;
};

/// Adaptive-moment descent with bias correction, no weight decay.
class Adam {
public:
    Adam(std::vector<Var> params, double lr, double beta1, double beta2, double eps);
    void step();
    void zero_grad();

private:
    std::vector<Var> params_;
    std::vector<Eigen::VectorXd> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    Index t_ = 0;
};

/// Differentiable loss for one sample: (total, text, mask).
struct SampleLoss {
    Var total;
    Var text;
    Var mask;
};
SampleLoss sample_loss(const Model& m, const synth::StubFeatures& f, const synth::SynthSample& s);

struct TrainResult {
    Model model;
    std::vector<LossPoint> curve;
};

/// Throws std::runtime_error naming the step when a step fails, including a non-finite loss.
TrainResult train(const TrainConfig& cfg);

std::string curve_to_csv(const std::vector<LossPoint>& curve);

/// Full inference on one sample; the rej head decides each token's [REJ] flag.
struct ModelPrediction {
    MaskPrediction masks;
    std::vector<bool> rej_flags;
};
ModelPrediction predict(const Model& m, const synth::SynthSample& s);

EvalRecord evaluate_sample(const Model& m, const synth::SynthSample& s);
MetricsReport evaluate(const Model& m, Index n_samples, std::uint64_t seed);

// Checkpoint: "DSFFCKPT", u32 version, u64 manifest length, JSON manifest
// {"version", "config", "tensors": {name: {"offset", "shape"}}}, then the
// DSFT blobs back to back; offsets are relative to the first blob.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const Model& m);
Model decode_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const Model& m);
Model load_checkpoint(const std::filesystem::path& path);

struct AblationEntry {
    Variant variant;
    std::vector<MetricsReport> per_seed;
    MetricsReport mean;
    Index params = 0;
};

/// Trains every variant for seeds cfg.seed .. cfg.seed + n_seeds - 1 and
/// scores each on held-out data drawn with seed + 1.
std::vector<AblationEntry> ablate(const TrainConfig& cfg, int n_seeds, Index n_eval);
std::string ablation_to_json(const std::vector<AblationEntry>& entries);

} // namespace dsffseg
