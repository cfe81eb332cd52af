// Copyright 2026 The dsffseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dsffseg/nn.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>

namespace dsffseg {

inline constexpr double kReferenceScopeFactor = 0.25;

/// Fuses detail tokens with compressed semantic tokens.
struct DsffParams {
    nn::AttentionParams attn;  // detail queries, semantic keys/values; wout is the fusion output projection
    nn::LinearParams offset_proj; // C -> 8 sampling offsets
    nn::LinearParams compress;    // 3C -> C over (detail, upsampled semantic, attended)
    double alpha = kReferenceScopeFactor;
};

DsffParams make_dsff(Rng& rng, Index channels, Index key_dim);

struct DsffOutput {
    Var t0_ds;    // C x H1 x W1
    Var attn_map; // (H1*W1) x (H2*W2)
};

/// detail: C x H1 x W1, semantic: C x H2 x W2 with H1 = 2 H2 and W1 = 2 W2.
DsffOutput dsff_forward(const Var& detail, const Var& semantic, const DsffParams& p);

struct GrayImage {
    Index height = 0;
    Index width = 0;
    std::vector<std::uint8_t> pixels; // row-major
};

/// One attention row, min-max scaled to [0, 255] on the semantic grid.
/// A constant row maps to mid-gray (128).
GrayImage export_attention_heatmap(const Tensor& attn_map, Index query_index, Index h2, Index w2);

void write_pgm(std::ostream& os, const GrayImage& img);

} // namespace dsffseg
