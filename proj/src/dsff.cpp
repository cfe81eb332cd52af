// Copyright 2026 The dsffseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsffseg/dsff.hpp"

#include <cmath>
#include <ostream>

namespace dsffseg {

DsffParams make_dsff(Rng& rng, Index channels, Index key_dim)
{
    DsffParams p;
    p.attn = nn::make_attention(rng, channels, key_dim);
    // Zero offsets: training starts from plain bilinear upsampling.
    p.offset_proj = nn::make_zero_linear(channels, 8);
    p.compress = nn::make_linear(rng, 3 * channels, channels);
    return p;
}

DsffOutput dsff_forward(const Var& detail, const Var& semantic, const DsffParams& p)
{
    if (detail.dims().size() != 3 || semantic.dims().size() != 3)
        throw ShapeError("dsff_forward: expected CxHxW maps");
    const Index c = detail.dim(0), h1 = detail.dim(1), w1 = detail.dim(2);
    if (semantic.dim(0) != c)
        throw ShapeError("dsff_forward: channel mismatch " + format_dims(detail.dims()) + " vs " +
                         format_dims(semantic.dims()));
    if (h1 != 2 * semantic.dim(1) || w1 != 2 * semantic.dim(2))
        throw ShapeError("dsff_forward: detail grid must be twice the semantic grid, got " +
                         format_dims(detail.dims()) + " vs " + format_dims(semantic.dims()));
    if (p.compress.in_features() != 3 * c || p.compress.out_features() != c)
        throw ShapeError("dsff_forward: compress must map 3C -> C");

    const Var detail_tokens = nn::map_to_tokens(detail);
    const auto attended = nn::cross_attention(detail_tokens, nn::map_to_tokens(semantic), p.attn);
    const Var upsampled = nn::dynamic_upsample(semantic, p.offset_proj, p.alpha);
    const Var branches[] = {detail, upsampled, nn::tokens_to_map(attended.out, h1, w1)};
    const Var fused = nn::linear(nn::map_to_tokens(concat_channels(branches)), p.compress);
    return {nn::tokens_to_map(fused, h1, w1), attended.attn};
}

GrayImage export_attention_heatmap(const Tensor& attn_map, Index query_index, Index h2, Index w2)
{
    if (attn_map.rank() != 2 || attn_map.dim(1) != h2 * w2)
        throw ShapeError("export_attention_heatmap: map " + format_dims(attn_map.dims()) + " does not match " +
                         std::to_string(h2) + "x" + std::to_string(w2));
    if (query_index < 0 || query_index >= attn_map.dim(0))
        throw std::out_of_range("export_attention_heatmap: query index " + std::to_string(query_index) +
                                " outside [0, " + std::to_string(attn_map.dim(0)) + ")");
    const auto row = attn_map.matrix().row(query_index);
    const double lo = row.minCoeff(), hi = row.maxCoeff();
    GrayImage img{h2, w2, std::vector<std::uint8_t>(static_cast<std::size_t>(h2 * w2), 128)};
    if (hi > lo) {
        for (Index i = 0; i < h2 * w2; ++i)
            img.pixels[static_cast<std::size_t>(i)] =
                static_cast<std::uint8_t>(std::lround(255.0 * (row[i] - lo) / (hi - lo)));
    }
    return img;
}

void write_pgm(std::ostream& os, const GrayImage& img)
{
    os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

} // namespace dsffseg
