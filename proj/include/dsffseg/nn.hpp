// Copyright 2026 The dsffseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dsffseg/autodiff.hpp"

namespace dsffseg::nn {

struct LinearParams {
    Var weight; // out x in
    Var bias;   // out

    Index in_features() const { return weight.dim(1); }
    Index out_features() const { return weight.dim(0); }
};

struct Conv2dParams {
    Var weight; // out x in x k x k
    Var bias;   // out

    Index kernel() const { return weight.dim(2); }
    Index in_channels() const { return weight.dim(1); }
    Index out_channels() const { return weight.dim(0); }
};

/// Single-head attention. wq/wk map width -> key_dim, wv/wout keep width.
struct AttentionParams {
    LinearParams wq, wk, wv, wout;

    Index key_dim() const { return wq.out_features(); }
    Index width() const { return wq.in_features(); }
};

/// Continuous source positions, channel 0 = row (y), channel 1 = column (x),
/// in source-pixel units; integer c addresses pixel centre c.
struct SampleGrid {
    Var coords; // 2 x H_out x W_out
};

struct AttentionOutput {
    Var out;  // Nq x C
    Var attn; // Nq x Nk
};

// Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) weights and zero bias.
LinearParams make_linear(Rng& rng, Index in, Index out);
LinearParams make_zero_linear(Index in, Index out);
Conv2dParams make_conv2d(Rng& rng, Index in, Index out, Index kernel);
AttentionParams make_attention(Rng& rng, Index width, Index key_dim);

Index param_count(const LinearParams& p);
Index param_count(const Conv2dParams& p);
Index param_count(const AttentionParams& p);

/// x * weight^T + bias, per row.
Var linear(const Var& x, const LinearParams& p);

/// Zero-padded stride-1 convolution that keeps H and W.
Var conv2d_same(const Var& x, const Conv2dParams& p);

/// (C*r*r, H, W) -> (C, r*H, r*W); out[c][h*r+i][w*r+j] = in[c*r*r + i*r + j][h][w].
Var pixel_shuffle(const Var& x, Index r);
/// Exact inverse of pixel_shuffle.
Var pixel_unshuffle(const Var& x, Index r);

/// out = wout(softmax(Q K^T / sqrt(key_dim)) V).
AttentionOutput cross_attention(const Var& q_in, const Var& kv_in, const AttentionParams& p);

/// Pixel-centre aligned grid for an integer upsampling factor r:
/// output (i, j) -> ((i + 0.5) / r - 0.5, (j + 0.5) / r - 0.5).
SampleGrid base_grid(Index h_in, Index w_in, Index h_out, Index w_out);

/// Bilinear interpolation at the grid positions with border clamping.
/// Differentiable in both x and the grid.
Var bilinear_sample(const Var& x, const SampleGrid& grid);

/// base_grid + bilinear_sample with a constant grid.
Var bilinear_resize(const Var& x, Index h_out, Index w_out);

/// Offset-driven x2 upsampling: O = pixel_shuffle(proj(x)), S = G + alpha * O.
Var dynamic_upsample(const Var& x, const LinearParams& offset_proj, double alpha);

/// (C, H, W) <-> (H*W, C), row-major over the spatial grid.
Var map_to_tokens(const Var& x);
Var tokens_to_map(const Var& tokens, Index h, Index w);

} // namespace dsffseg::nn
