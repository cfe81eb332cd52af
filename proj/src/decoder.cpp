// Copyright 2026 The dsffseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsffseg/decoder.hpp"

#include <stdexcept>

namespace dsffseg {

Mask binarize(const Tensor& probs, double threshold)
{
    if (probs.rank() != 2) throw ShapeError("binarize: expected HxW, got " + format_dims(probs.dims()));
    return (probs.matrix().array() > threshold).cast<std::uint8_t>();
}

std::string_view to_string(Variant v)
{
    switch (v) {
    case Variant::DetailOnly: return "detail";
    case Variant::SemanticOnly: return "semantic";
    case Variant::Concat: return "concat";
    case Variant::Dsff: return "dsff";
    }
    return "unknown";
}

Variant parse_variant(std::string_view name)
{
    if (name == "detail") return Variant::DetailOnly;
    if (name == "semantic") return Variant::SemanticOnly;
    if (name == "concat") return Variant::Concat;
    if (name == "dsff") return Variant::Dsff;
    throw std::invalid_argument("unknown variant '" + std::string(name) + "'");
}

void DecoderConfig::validate() const
{
    if (c_llm <= 0 || c <= 0 || head_mid_channels <= 0 || head_shuffle_r <= 0)
        throw ShapeError("decoder config: widths must be positive");
    if (grid_detail.height != 2 * grid_semantic.height || grid_detail.width != 2 * grid_semantic.width)
        throw ShapeError("decoder config: grid_detail must be 2 x grid_semantic");
    if (head_mid_channels % (head_shuffle_r * head_shuffle_r) != 0)
        throw ShapeError("decoder config: head_mid_channels not divisible by head_shuffle_r^2");
    const Index hh = grid_detail.height * head_shuffle_r, hw = grid_detail.width * head_shuffle_r;
    if (final_mask_hw.height % hh != 0 || final_mask_hw.width % hw != 0 ||
        final_mask_hw.height / hh != final_mask_hw.width / hw)
        throw ShapeError("decoder config: final_mask_hw must be an integer multiple of the head output");
}

DecoderConfig DecoderConfig::desk() { return {}; }

DecoderConfig DecoderConfig::full_scale()
{
    DecoderConfig cfg;
    cfg.c_llm = 4096;
    cfg.c = 1024;
    cfg.grid_detail = {32, 32};
    cfg.grid_semantic = {16, 16};
    cfg.head_mid_channels = 1024;
    cfg.head_shuffle_r = 2;
    cfg.final_mask_hw = {448, 448};
    return cfg;
}

DecoderParams build_variant(const DecoderConfig& config, Rng& rng)
{
    config.validate();
    const Index c = config.c;
    const Index r = config.head_shuffle_r;
    DecoderParams p;
    p.variant = config.variant;
    p.alpha = config.alpha;
    if (config.variant != Variant::DetailOnly) p.phi1 = nn::make_linear(rng, config.c_llm, c);
    p.phi2 = nn::make_linear(rng, config.c_llm, c);
    switch (config.variant) {
    case Variant::Dsff:
        p.dsff = make_dsff(rng, c, c);
        p.dsff->alpha = config.alpha;
        break;
    case Variant::Concat:
        p.concat_compress = nn::make_linear(rng, 2 * c, c);
        break;
    case Variant::DetailOnly:
    case Variant::SemanticOnly:
        break;
    }
    p.seg_attn = nn::make_attention(rng, c, c);
    p.head_k3 = nn::make_conv2d(rng, c, config.head_mid_channels, 3);
    p.head_k5 = nn::make_conv2d(rng, config.head_mid_channels / (r * r), 1, 5);
    return p;
}

namespace {

using Named = std::vector<std::pair<std::string, Var>>;

void push(Named& out, const std::string& name, const nn::LinearParams& l)
{
    out.emplace_back(name + ".weight", l.weight);
    out.emplace_back(name + ".bias", l.bias);
}

void push(Named& out, const std::string& name, const nn::AttentionParams& a)
{
    push(out, name + ".wq", a.wq);
    push(out, name + ".wk", a.wk);
    push(out, name + ".wv", a.wv);
    push(out, name + ".wout", a.wout);
}

} // namespace

std::vector<std::pair<std::string, Var>> named_parameters(const DecoderParams& p)
{
    Named out;
    if (p.phi1) push(out, "phi1", *p.phi1);
    push(out, "phi2", p.phi2);
    if (p.dsff) {
        push(out, "dsff.attn", p.dsff->attn);
        push(out, "dsff.offset_proj", p.dsff->offset_proj);
        push(out, "dsff.compress", p.dsff->compress);
    }
    if (p.concat_compress) push(out, "concat.compress", *p.concat_compress);
    push(out, "seg_attn", p.seg_attn);
    out.emplace_back("head_k3.weight", p.head_k3.weight);
    out.emplace_back("head_k3.bias", p.head_k3.bias);
    out.emplace_back("head_k5.weight", p.head_k5.weight);
    out.emplace_back("head_k5.bias", p.head_k5.bias);
    return out;
}

Index param_count(const DecoderParams& p)
{
    Index n = 0;
    for (const auto& [name, v] : named_parameters(p)) n += v.size();
    return n;
}

CompressOutput compress(const Var& t2_img, const Var& seg_tokens, const DecoderParams& p)
{
    CompressOutput out;
    if (p.phi1) out.t3_img = nn::linear(t2_img, *p.phi1);
    out.t1_seg = nn::linear(seg_tokens, p.phi2);
    return out;
}

std::vector<Var> inject_seg(const Var& t0_ds, const Var& t1_seg, const DecoderParams& p)
{
    if (t1_seg.dims().size() != 2 || t1_seg.dim(0) == 0) throw ShapeError("inject_seg: need at least one seg token");
    if (t0_ds.dims().size() != 3 || t1_seg.dim(1) != t0_ds.dim(0))
        throw ShapeError("inject_seg: width mismatch " + format_dims(t0_ds.dims()) + " vs " + format_dims(t1_seg.dims()));
    const Index h = t0_ds.dim(1), w = t0_ds.dim(2);
    const Var queries = nn::map_to_tokens(t0_ds);
    std::vector<Var> maps;
    maps.reserve(static_cast<std::size_t>(t1_seg.dim(0)));
    for (Index s = 0; s < t1_seg.dim(0); ++s) {
        const auto att = nn::cross_attention(queries, slice_rows(t1_seg, s, 1), p.seg_attn);
        maps.push_back(nn::tokens_to_map(add(att.out, queries), h, w));
    }
    return maps;
}

Var mask_head(const Var& t1_ds, const DecoderParams& p, GridSize final_hw)
{
    const Index mid_channels = p.head_k3.out_channels(), shuffled = p.head_k5.in_channels();
    Index r = 1;
    while (r * r * shuffled < mid_channels) ++r;
    if (r * r * shuffled != mid_channels)
        throw ShapeError("mask_head: head_k3 output channels " + std::to_string(mid_channels) +
                         " are not head_k5 input channels x r^2");
    const Var mid = nn::pixel_shuffle(nn::conv2d_same(t1_ds, p.head_k3), r);
    const Var logits = nn::bilinear_resize(nn::conv2d_same(mid, p.head_k5), final_hw.height, final_hw.width);
    return reshape(logits, {final_hw.height, final_hw.width});
}

FusedFeatures fuse_features(const Var& t1_img, const Var& t3_img, const DecoderParams& p, const DecoderConfig& config)
{
    const Index h1 = config.grid_detail.height, w1 = config.grid_detail.width;
    const Index h2 = config.grid_semantic.height, w2 = config.grid_semantic.width;
    switch (p.variant) {
    case Variant::DetailOnly:
        return {nn::tokens_to_map(t1_img, h1, w1), {}};
    case Variant::SemanticOnly:
        return {nn::bilinear_resize(nn::tokens_to_map(t3_img, h2, w2), h1, w1), {}};
    case Variant::Concat: {
        const Var branches[] = {nn::tokens_to_map(t1_img, h1, w1),
                                nn::bilinear_resize(nn::tokens_to_map(t3_img, h2, w2), h1, w1)};
        const Var fused = nn::linear(nn::map_to_tokens(concat_channels(branches)), *p.concat_compress);
        return {nn::tokens_to_map(fused, h1, w1), {}};
    }
    case Variant::Dsff: {
        const auto out = dsff_forward(nn::tokens_to_map(t1_img, h1, w1), nn::tokens_to_map(t3_img, h2, w2), *p.dsff);
        return {out.t0_ds, out.attn_map};
    }
    }
    throw std::invalid_argument("fuse_features: unknown variant");
}

DecoderTrace decoder_trace(const Var& t1_img, const Var& t2_img, const Var& seg_tokens, const DecoderParams& p,
                           const DecoderConfig& config)
{
    const Index n1 = config.grid_detail.height * config.grid_detail.width;
    const Index n2 = config.grid_semantic.height * config.grid_semantic.width;
    if (t1_img.dims() != Dims{n1, config.c})
        throw ShapeError("decoder: t1_img " + format_dims(t1_img.dims()) + ", expected " + format_dims({n1, config.c}));
    if (t2_img.dims() != Dims{n2, config.c_llm})
        throw ShapeError("decoder: t2_img " + format_dims(t2_img.dims()) + ", expected " +
                         format_dims({n2, config.c_llm}));
    if (seg_tokens.dims().size() != 2 || seg_tokens.dim(1) != config.c_llm || seg_tokens.dim(0) == 0)
        throw ShapeError("decoder: seg tokens " + format_dims(seg_tokens.dims()) + " do not match c_llm");

    const auto compressed = compress(t2_img, seg_tokens, p);
    const auto fused = fuse_features(t1_img, compressed.t3_img, p, config);
    DecoderTrace trace;
    trace.t1_seg = compressed.t1_seg;
    trace.attn_map = fused.attn_map;
    for (const Var& t1_ds : inject_seg(fused.t0_ds, compressed.t1_seg, p))
        trace.logits.push_back(mask_head(t1_ds, p, config.final_mask_hw));
    return trace;
}

Mask merge_masks(std::span<const Tensor> probs, const std::vector<bool>& rej_flags, GridSize hw)
{
    if (rej_flags.size() != probs.size()) throw ShapeError("merge_masks: rej_flags length differs from token count");
    Mask merged = Mask::Zero(hw.height, hw.width);
    for (std::size_t s = 0; s < probs.size(); ++s) {
        if (rej_flags[s]) continue;
        merged = merged.max(binarize(probs[s]));
    }
    return merged;
}

MaskPrediction decoder_forward(const Tensor& t1_img, const Tensor& t2_img, const SegTokenSet& seg,
                               const DecoderParams& p, const DecoderConfig& config)
{
    if (static_cast<Index>(seg.rej_flags.size()) != seg.tokens.dim(0))
        throw ShapeError("decoder: rej_flags length differs from token count");
    const auto trace = decoder_trace(Var::constant(t1_img), Var::constant(t2_img), Var::constant(seg.tokens), p, config);
    MaskPrediction pred;
    for (const Var& l : trace.logits) {
        pred.per_token_logits.push_back(l.value());
        pred.per_token_probs.push_back(sigmoid(l).value());
    }
    pred.merged_binary = merge_masks(pred.per_token_probs, seg.rej_flags, config.final_mask_hw);
    if (trace.attn_map.defined()) pred.attn_map = trace.attn_map.value();
    return pred;
}

} // namespace dsffseg
