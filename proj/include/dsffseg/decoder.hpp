// Copyright 2026 The dsffseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dsffseg/dsff.hpp"
#include "dsffseg/nn.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dsffseg {

/// Binary map, 1 = foreground.
using Mask = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Pixels with value strictly above the threshold. Input must be rank 2.
Mask binarize(const Tensor& probs, double threshold = 0.5);

/// Image-feature sources feeding the mask head.
enum class Variant {
    DetailOnly,   // encoder tokens only
    SemanticOnly, // compressed LLM tokens, bilinear x2
    Concat,       // both, concatenated and compressed
    Dsff,         // full fusion module
};

std::string_view to_string(Variant v);
/// Accepts "detail", "semantic", "concat", "dsff".
Variant parse_variant(std::string_view name);

struct GridSize {
    Index height = 0;
    Index width = 0;
    friend bool operator==(const GridSize&, const GridSize&) = default;
};

struct DecoderConfig {
    Index c_llm = 64;
    Index c = 32;
    GridSize grid_detail{8, 8};
    GridSize grid_semantic{4, 4};
    Index head_mid_channels = 32;
    Index head_shuffle_r = 2;
    GridSize final_mask_hw{64, 64};
    Variant variant = Variant::Dsff;
    double alpha = kReferenceScopeFactor;

    /// Throws ShapeError on inconsistent dimensions.
    void validate() const;

    static DecoderConfig desk();
    /// 32x32 / 16x16 grids, 4096 -> 1024 channels, 448x448 masks.
    static DecoderConfig full_scale();
};

struct DecoderParams {
    Variant variant = Variant::Dsff;
    std::optional<nn::LinearParams> phi1; // c_llm -> c, absent for DetailOnly
    nn::LinearParams phi2;                // c_llm -> c, seg tokens
    std::optional<DsffParams> dsff;       // Dsff only
    std::optional<nn::LinearParams> concat_compress; // Concat only, 2c -> c
    nn::AttentionParams seg_attn;
    nn::Conv2dParams head_k3; // c -> head_mid
    nn::Conv2dParams head_k5; // head_mid / r^2 -> 1
    double alpha = kReferenceScopeFactor;
};

/// Fresh parameters for config.variant, drawn from rng.
DecoderParams build_variant(const DecoderConfig& config, Rng& rng);

/// Stable, unique names in a fixed order; used for checkpoints and optimizers.
std::vector<std::pair<std::string, Var>> named_parameters(const DecoderParams& p);

Index param_count(const DecoderParams& p);

/// Hidden states at [SEG] positions and whether each was emitted as [REJ].
struct SegTokenSet {
    Tensor tokens; // S x c_llm
    std::vector<bool> rej_flags;
};

struct CompressOutput {
    Var t3_img; // N2 x c, undefined when the variant has no phi1
    Var t1_seg; // S x c
};

CompressOutput compress(const Var& t2_img, const Var& seg_tokens, const DecoderParams& p);

/// Seg-token injection. Each token is the single key/value for queries drawn
/// from every position of t0_ds; t0_ds is added back residually.
std::vector<Var> inject_seg(const Var& t0_ds, const Var& t1_seg, const DecoderParams& p);

/// conv3x3 -> pixel shuffle -> conv5x5 -> bilinear resize; returns H x W logits.
Var mask_head(const Var& t1_ds, const DecoderParams& p, GridSize final_hw);

/// Builds t0_ds for the configured variant.
struct FusedFeatures {
    Var t0_ds;
    Var attn_map; // Dsff only
};
FusedFeatures fuse_features(const Var& t1_img, const Var& t3_img, const DecoderParams& p, const DecoderConfig& config);

/// Differentiable pipeline output.
struct DecoderTrace {
    std::vector<Var> logits; // one final_H x final_W map per seg token
    Var t1_seg;
    Var attn_map;
};

/// t1_img: N1 x c detail tokens, t2_img: N2 x c_llm semantic tokens.
DecoderTrace decoder_trace(const Var& t1_img, const Var& t2_img, const Var& seg_tokens, const DecoderParams& p,
                           const DecoderConfig& config);

struct MaskPrediction {
    std::vector<Tensor> per_token_logits;
    std::vector<Tensor> per_token_probs;
    Mask merged_binary;
    std::optional<Tensor> attn_map;
};

/// Union of binarized probabilities over tokens not flagged as rejected.
Mask merge_masks(std::span<const Tensor> probs, const std::vector<bool>& rej_flags, GridSize hw);

MaskPrediction decoder_forward(const Tensor& t1_img, const Tensor& t2_img, const SegTokenSet& seg,
                               const DecoderParams& p, const DecoderConfig& config);

} // namespace dsffseg
