// Copyright 2026 The dsffseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dsffseg/decoder.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <vector>

namespace dsffseg::synth {

enum class Shape { Rectangle, Disk, Triangle };
enum class Color { Red, Green, Blue, Yellow };
enum class Relation { Anywhere, LeftHalf, RightHalf };

inline constexpr int kShapes = 3;
inline constexpr int kColors = 4;
inline constexpr int kRelations = 3;
inline constexpr int kExpressions = kShapes * kColors * kRelations;
inline constexpr int kMaxTargets = 3;

struct Expression {
    Shape shape;
    Color color;
    Relation relation;

    int id() const;
    static Expression from_id(int id);
    friend bool operator==(const Expression&, const Expression&) = default;
};

std::array<double, 3> palette(Color c);

struct GenConfig {
    Index image_size = 64;
    double p_empty = 0.25;
    int min_objects = 1;
    int max_objects = 3;
    double min_radius = 7.0;
    double max_radius = 14.0;
    double noise_amplitude = 0.25;
};

struct SceneObject {
    Shape shape;
    Color color;
    double cy, cx, radius;
};

bool matches(const Expression& e, const SceneObject& o, Index image_size);

/// Hard-edged footprint of one object on an image_size^2 canvas.
Mask rasterize(const SceneObject& o, Index image_size);

struct SynthSample {
    Tensor image; // 3 x H x W in [0, 1]
    int expression_id = 0;
    std::vector<Mask> gt_masks; // visible pixels of each referred object
    bool no_target = false;
    std::vector<int> text_target_ids; // per seg token: 1 = [SEG], 0 = [REJ]
    std::vector<SceneObject> objects;

    /// Union of gt_masks (all zero when there is no target).
    Mask target_union() const;
};

/// Paints objects back to front over a noise background and collects the
/// visible masks of every object matched by the expression.
SynthSample compose_sample(const std::vector<SceneObject>& objects, const Expression& expression, const GenConfig& cfg,
                           Rng& noise_rng);

SynthSample gen_sample(Rng& rng, const GenConfig& cfg);

/// Deterministic sample for (seed, index).
SynthSample sample_at(std::uint64_t seed, std::uint64_t index, const GenConfig& cfg);

// ---- frozen stand-ins for the multimodal model ----------------------------

struct StubConfig {
    Index patch = 8;
    std::uint64_t seed = 20250807;
    double grounding_gain = 3.0;
    double presence_gain = 3.0;
};

/// Frozen, non-trainable weights of the stand-in encoder and language model.
struct StubModel {
    StubConfig config;
    Index image_size = 0;
    Index c = 0;
    Index c_llm = 0;
    GridSize grid_semantic;
    Tensor patch_proj;    // c x (3 * patch^2)
    Tensor patch_bias;    // c
    Tensor lift;          // c_llm x c
    Tensor expr_embed;    // kExpressions x c_llm
    Tensor ground_dir;    // c_llm, unit norm
    Tensor seg_embed;     // kExpressions x c_llm
    Tensor slot_embed;    // kMaxTargets x c_llm
    Tensor presence_dir;  // c_llm, unit norm
};

StubModel make_stub(const StubConfig& cfg, const DecoderConfig& decoder, Index image_size);

/// Per-patch projection of raw pixels: (H/p * W/p) x c, row-major patches.
Tensor stub_vision_encode(const Tensor& image, const StubModel& m);

/// Per semantic cell, the fraction of pixels covered by the referred objects.
Tensor coarse_grounding(const Mask& target, GridSize grid);

struct LlmOutput {
    Tensor t2_img; // N2 x c_llm
    SegTokenSet seg;
};

/// 2x2-pooled detail tokens lifted to c_llm, shifted by an expression
/// embedding and by the coarse grounding along a fixed direction. One seg
/// token per slot.
LlmOutput stub_llm(const Tensor& t1_img, int expression_id, const Tensor& grounding, int slots, const StubModel& m);

struct StubFeatures {
    Tensor t1_img;
    Tensor t2_img;
    SegTokenSet seg;
    Tensor gt_union; // H x W, 0/1
};

StubFeatures featurize(const SynthSample& sample, const StubModel& m);

void write_ppm(std::ostream& os, const Tensor& image);

} // namespace dsffseg::synth
