// Copyright 2026 The dsffseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsffseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace dsffseg::synth {

int Expression::id() const
{
    return (static_cast<int>(shape) * kColors + static_cast<int>(color)) * kRelations + static_cast<int>(relation);
}

Expression Expression::from_id(int id)
{
    if (id < 0 || id >= kExpressions) throw std::out_of_range("expression id " + std::to_string(id));
    return {static_cast<Shape>(id / (kColors * kRelations)), static_cast<Color>((id / kRelations) % kColors),
            static_cast<Relation>(id % kRelations)};
}

std::array<double, 3> palette(Color c)
{
    switch (c) {
    case Color::Red: return {0.92, 0.12, 0.12};
    case Color::Green: return {0.12, 0.85, 0.18};
    case Color::Blue: return {0.15, 0.30, 0.95};
    case Color::Yellow: return {0.95, 0.90, 0.15};
    }
    return {0, 0, 0};
}

bool matches(const Expression& e, const SceneObject& o, Index image_size)
{
    if (e.shape != o.shape || e.color != o.color) return false;
    const double half = static_cast<double>(image_size) / 2.0;
    switch (e.relation) {
    case Relation::Anywhere: return true;
    case Relation::LeftHalf: return o.cx < half;
    case Relation::RightHalf: return o.cx >= half;
    }
    return false;
}

Mask rasterize(const SceneObject& o, Index n)
{
    Mask m = Mask::Zero(n, n);
    const double r = o.radius;
    for (Index y = 0; y < n; ++y)
        for (Index x = 0; x < n; ++x) {
            const double dy = static_cast<double>(y) - o.cy;
            const double dx = static_cast<double>(x) - o.cx;
            bool inside = false;
            switch (o.shape) {
            case Shape::Rectangle:
                inside = std::abs(dy) <= 0.8 * r && std::abs(dx) <= r;
                break;
            case Shape::Disk:
                inside = dy * dy + dx * dx <= r * r;
                break;
            case Shape::Triangle:
                // Apex up at (cy - r), base at (cy + r) spanning [cx - r, cx + r].
                inside = dy <= r && dy >= -r && std::abs(dx) <= (dy + r) / 2.0;
                break;
            }
            m(y, x) = inside ? 1 : 0;
        }
    return m;
}

Mask SynthSample::target_union() const
{
    const Index h = image.dim(1), w = image.dim(2);
    Mask u = Mask::Zero(h, w);
    for (const auto& m : gt_masks) u = u.max(m);
    return u;
}

SynthSample compose_sample(const std::vector<SceneObject>& objects, const Expression& expression, const GenConfig& cfg,
                           Rng& noise_rng)
{
    const Index n = cfg.image_size;
    SynthSample s;
    s.image = Tensor({3, n, n});
    for (Index i = 0; i < s.image.size(); ++i) s.image[i] = noise_rng.uniform(0.0, cfg.noise_amplitude);

    std::vector<Mask> footprints;
    for (const auto& o : objects) footprints.push_back(rasterize(o, n));
    for (std::size_t k = 0; k < objects.size(); ++k) {
        const auto rgb = palette(objects[k].color);
        for (Index y = 0; y < n; ++y)
            for (Index x = 0; x < n; ++x)
                if (footprints[k](y, x))
                    for (Index c = 0; c < 3; ++c) s.image.at(c, y, x) = rgb[static_cast<std::size_t>(c)];
    }
    for (std::size_t k = 0; k < objects.size(); ++k) {
        if (!matches(expression, objects[k], n)) continue;
        Mask visible = footprints[k];
        for (std::size_t later = k + 1; later < objects.size(); ++later)
            visible = visible * (1 - footprints[later]);
        if (visible.count() > 0 && static_cast<int>(s.gt_masks.size()) < kMaxTargets) s.gt_masks.push_back(visible);
    }
    s.expression_id = expression.id();
    s.objects = objects;
    s.no_target = s.gt_masks.empty();
    if (s.no_target)
        s.text_target_ids = {0};
    else
        s.text_target_ids.assign(s.gt_masks.size(), 1);
    return s;
}

namespace {

std::vector<SceneObject> place_objects(Rng& rng, const GenConfig& cfg)
{
    const double size = static_cast<double>(cfg.image_size);
    const int count =
        cfg.min_objects + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_objects - cfg.min_objects + 1)));
    std::vector<SceneObject> objects;
    for (int k = 0; k < count; ++k) {
        for (int attempt = 0; attempt < 50; ++attempt) {
            SceneObject o{};
            o.shape = static_cast<Shape>(rng.below(kShapes));
            o.color = static_cast<Color>(rng.below(kColors));
            o.radius = rng.uniform(cfg.min_radius, cfg.max_radius);
            o.cy = rng.uniform(o.radius, size - 1.0 - o.radius);
            o.cx = rng.uniform(o.radius, size - 1.0 - o.radius);
            const bool clear = std::all_of(objects.begin(), objects.end(), [&](const SceneObject& p) {
                return std::hypot(p.cy - o.cy, p.cx - o.cx) >= 0.9 * (p.radius + o.radius);
            });
            if (clear) {
                objects.push_back(o);
                break;
            }
        }
    }
    return objects;
}

} // namespace

SynthSample gen_sample(Rng& rng, const GenConfig& cfg)
{
    for (;;) {
        auto objects = place_objects(rng, cfg);
        if (objects.empty()) continue;
        Expression expr{};
        const bool want_empty = rng.bernoulli(cfg.p_empty);
        if (want_empty) {
            std::vector<int> free;
            for (int id = 0; id < kExpressions; ++id) {
                const auto e = Expression::from_id(id);
                if (std::none_of(objects.begin(), objects.end(),
                                 [&](const SceneObject& o) { return matches(e, o, cfg.image_size); }))
                    free.push_back(id);
            }
            expr = Expression::from_id(free[rng.below(free.size())]);
        } else {
            const auto& o = objects[rng.below(objects.size())];
            const Relation side = o.cx < static_cast<double>(cfg.image_size) / 2.0 ? Relation::LeftHalf : Relation::RightHalf;
            expr = {o.shape, o.color, rng.bernoulli(0.5) ? Relation::Anywhere : side};
        }
        auto sample = compose_sample(objects, expr, cfg, rng);
        // A fully occluded referent would silently turn into a no-target case.
        if (sample.no_target == want_empty) return sample;
    }
}

SynthSample sample_at(std::uint64_t seed, std::uint64_t index, const GenConfig& cfg)
{
    Rng rng = Rng(seed).fork(index);
    return gen_sample(rng, cfg);
}

namespace {

Tensor unit_vector(Rng& rng, Index n)
{
    Tensor v = uniform_tensor(rng, {n}, -1.0, 1.0);
    v.data().normalize();
    return v;
}

} // namespace

StubModel make_stub(const StubConfig& cfg, const DecoderConfig& decoder, Index image_size)
{
    if (image_size % cfg.patch != 0) throw ShapeError("stub: image size not divisible by patch size");
    if (image_size / cfg.patch != decoder.grid_detail.height || image_size / cfg.patch != decoder.grid_detail.width)
        throw ShapeError("stub: patch grid does not match the decoder's detail grid");
    StubModel m;
    m.config = cfg;
    m.image_size = image_size;
    m.c = decoder.c;
    m.c_llm = decoder.c_llm;
    m.grid_semantic = decoder.grid_semantic;
    Rng rng(cfg.seed);
    const Index in = 3 * cfg.patch * cfg.patch;
    const double pb = std::sqrt(3.0 / static_cast<double>(in));
    m.patch_proj = uniform_tensor(rng, {m.c, in}, -pb, pb);
    m.patch_bias = uniform_tensor(rng, {m.c}, -0.1, 0.1);
    const double lb = std::sqrt(3.0 / static_cast<double>(m.c));
    m.lift = uniform_tensor(rng, {m.c_llm, m.c}, -lb, lb);
    m.expr_embed = uniform_tensor(rng, {kExpressions, m.c_llm}, -0.5, 0.5);
    m.ground_dir = unit_vector(rng, m.c_llm);
    m.seg_embed = uniform_tensor(rng, {kExpressions, m.c_llm}, -0.5, 0.5);
    m.slot_embed = uniform_tensor(rng, {kMaxTargets, m.c_llm}, -0.5, 0.5);
    m.presence_dir = unit_vector(rng, m.c_llm);
    return m;
}

Tensor stub_vision_encode(const Tensor& image, const StubModel& m)
{
    const Index p = m.config.patch;
    if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("stub_vision_encode: expected 3xHxW image");
    const Index h = image.dim(1), w = image.dim(2);
    if (h % p != 0 || w % p != 0)
        throw ShapeError("stub_vision_encode: " + format_dims(image.dims()) + " not divisible by patch " + std::to_string(p));
    const Index gh = h / p, gw = w / p;
    RowMatrixXd patches(gh * gw, 3 * p * p);
    for (Index py = 0; py < gh; ++py)
        for (Index px = 0; px < gw; ++px)
            for (Index c = 0; c < 3; ++c)
                for (Index y = 0; y < p; ++y)
                    for (Index x = 0; x < p; ++x)
                        patches(py * gw + px, (c * p + y) * p + x) = image.at(c, py * p + y, px * p + x);
    Tensor out({gh * gw, m.c});
    out.matrix().noalias() = patches * m.patch_proj.matrix().transpose();
    out.matrix().rowwise() += m.patch_bias.data().transpose();
    return out;
}

Tensor coarse_grounding(const Mask& target, GridSize grid)
{
    if (target.rows() % grid.height != 0 || target.cols() % grid.width != 0)
        throw ShapeError("coarse_grounding: mask not divisible into the semantic grid");
    const Index ch = target.rows() / grid.height, cw = target.cols() / grid.width;
    Tensor g({grid.height, grid.width});
    for (Index i = 0; i < grid.height; ++i)
        for (Index j = 0; j < grid.width; ++j)
            g[i * grid.width + j] = static_cast<double>(target.block(i * ch, j * cw, ch, cw).cast<int>().sum()) /
                                    static_cast<double>(ch * cw);
    return g;
}

LlmOutput stub_llm(const Tensor& t1_img, int expression_id, const Tensor& grounding, int slots, const StubModel& m)
{
    const Index h2 = m.grid_semantic.height, w2 = m.grid_semantic.width;
    const Index h1 = 2 * h2, w1 = 2 * w2;
    if (t1_img.dims() != Dims{h1 * w1, m.c}) throw ShapeError("stub_llm: t1_img " + format_dims(t1_img.dims()));
    if (grounding.size() != h2 * w2) throw ShapeError("stub_llm: grounding does not cover the semantic grid");
    if (slots < 1 || slots > kMaxTargets) throw std::out_of_range("stub_llm: slot count " + std::to_string(slots));
    const auto expr = Expression::from_id(expression_id).id();

    RowMatrixXd pooled = RowMatrixXd::Zero(h2 * w2, m.c);
    const auto t1 = t1_img.matrix();
    for (Index i = 0; i < h1; ++i)
        for (Index j = 0; j < w1; ++j) pooled.row((i / 2) * w2 + j / 2) += 0.25 * t1.row(i * w1 + j);

    LlmOutput out;
    out.t2_img = Tensor({h2 * w2, m.c_llm});
    auto t2 = out.t2_img.matrix();
    t2.noalias() = pooled * m.lift.matrix().transpose();
    t2.rowwise() += m.expr_embed.matrix().row(expr);
    t2 += m.config.grounding_gain * grounding.data() * m.ground_dir.data().transpose();

    const double presence = grounding.data().maxCoeff();
    out.seg.tokens = Tensor({slots, m.c_llm});
    auto seg = out.seg.tokens.matrix();
    for (int s = 0; s < slots; ++s)
        seg.row(s) = m.seg_embed.matrix().row(expr) + m.slot_embed.matrix().row(s) +
                     m.config.presence_gain * presence * m.presence_dir.data().transpose();
    out.seg.rej_flags.assign(static_cast<std::size_t>(slots), false);
    return out;
}

StubFeatures featurize(const SynthSample& sample, const StubModel& m)
{
    StubFeatures f;
    const Mask target = sample.target_union();
    f.t1_img = stub_vision_encode(sample.image, m);
    auto llm = stub_llm(f.t1_img, sample.expression_id, coarse_grounding(target, m.grid_semantic),
                        static_cast<int>(sample.text_target_ids.size()), m);
    f.t2_img = std::move(llm.t2_img);
    f.seg = std::move(llm.seg);
    f.gt_union = Tensor({target.rows(), target.cols()});
    for (Index y = 0; y < target.rows(); ++y)
        for (Index x = 0; x < target.cols(); ++x) f.gt_union[y * target.cols() + x] = target(y, x);
    return f;
}

void write_ppm(std::ostream& os, const Tensor& image)
{
    if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("write_ppm: expected 3xHxW image");
    const Index h = image.dim(1), w = image.dim(2);
    os << "P6\n" << w << ' ' << h << "\n255\n";
    for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x)
            for (Index c = 0; c < 3; ++c) {
                const double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
                os.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
            }
}

} // namespace dsffseg::synth
