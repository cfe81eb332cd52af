// Copyright 2026 The dsffseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsffseg/nn.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace dsffseg::nn {

namespace {

using detail::Node;

Node& in(Node& n, std::size_t i) { return *n.inputs[i]; }

void require_map(const Var& x, const char* op)
{
    if (x.dims().size() != 3) throw ShapeError(std::string(op) + ": expected CxHxW, got " + format_dims(x.dims()));
}

} // namespace

LinearParams make_linear(Rng& rng, Index in, Index out)
{
    const double bound = std::sqrt(1.0 / static_cast<double>(in));
    return {Var::leaf(uniform_tensor(rng, {out, in}, -bound, bound)), Var::leaf(Tensor::zeros({out}))};
}

LinearParams make_zero_linear(Index in, Index out)
{
    return {Var::leaf(Tensor::zeros({out, in})), Var::leaf(Tensor::zeros({out}))};
}

Conv2dParams make_conv2d(Rng& rng, Index in, Index out, Index kernel)
{
    if (kernel % 2 == 0) throw ShapeError("conv2d: kernel must be odd, got " + std::to_string(kernel));
    const double bound = std::sqrt(1.0 / static_cast<double>(in * kernel * kernel));
    return {Var::leaf(uniform_tensor(rng, {out, in, kernel, kernel}, -bound, bound)), Var::leaf(Tensor::zeros({out}))};
}

AttentionParams make_attention(Rng& rng, Index width, Index key_dim)
{
    AttentionParams p;
    p.wq = make_linear(rng, width, key_dim);
    p.wk = make_linear(rng, width, key_dim);
    p.wv = make_linear(rng, width, width);
    p.wout = make_linear(rng, width, width);
    return p;
}

Index param_count(const LinearParams& p) { return p.weight.size() + p.bias.size(); }
Index param_count(const Conv2dParams& p) { return p.weight.size() + p.bias.size(); }
Index param_count(const AttentionParams& p)
{
    return param_count(p.wq) + param_count(p.wk) + param_count(p.wv) + param_count(p.wout);
}

Var linear(const Var& x, const LinearParams& p)
{
    if (x.dims().size() != 2 || x.dim(1) != p.in_features())
        throw ShapeError("linear: input " + format_dims(x.dims()) + " vs weight " + format_dims(p.weight.dims()));
    Tensor out({x.dim(0), p.out_features()});
    auto y = out.matrix();
    y.noalias() = x.value().matrix() * p.weight.value().matrix().transpose();
    y.rowwise() += p.bias.value().data().transpose();
    return make_result(std::move(out), {x, p.weight, p.bias}, [](Node& n) {
        Node& X = in(n, 0);
        Node& W = in(n, 1);
        Node& B = in(n, 2);
        const Index rows = n.value.dim(0);
        const Index outs = n.value.dim(1);
        const Index ins = X.value.dim(1);
        const auto dY = Eigen::Map<const RowMatrixXd>(n.grad.data(), rows, outs);
        if (X.requires_grad)
            Eigen::Map<RowMatrixXd>(X.grad_buffer().data(), rows, ins).noalias() += dY * W.value.matrix();
        if (W.requires_grad)
            Eigen::Map<RowMatrixXd>(W.grad_buffer().data(), outs, ins).noalias() += dY.transpose() * X.value.matrix();
        if (B.requires_grad) B.grad_buffer() += dY.colwise().sum().transpose();
    });
}

Var conv2d_same(const Var& x, const Conv2dParams& p)
{
    require_map(x, "conv2d_same");
    const Index k = p.weight.dim(2);
    if (k % 2 == 0) throw ShapeError("conv2d_same: even kernel " + std::to_string(k) + " rejected");
    if (p.weight.dims().size() != 4 || p.weight.dim(3) != k || p.in_channels() != x.dim(0))
        throw ShapeError("conv2d_same: input " + format_dims(x.dims()) + " vs weight " + format_dims(p.weight.dims()));
    const Index cin = x.dim(0), h = x.dim(1), w = x.dim(2), cout = p.out_channels();
    const Index pad = (k - 1) / 2;
    const Index patch = cin * k * k;

    // im2col: one column per output pixel.
    auto cols = std::make_shared<RowMatrixXd>(RowMatrixXd::Zero(patch, h * w));
    const auto& xv = x.value();
    for (Index c = 0; c < cin; ++c)
        for (Index ky = 0; ky < k; ++ky)
            for (Index kx = 0; kx < k; ++kx) {
                const Index row = (c * k + ky) * k + kx;
                for (Index yy = 0; yy < h; ++yy) {
                    const Index sy = yy + ky - pad;
                    if (sy < 0 || sy >= h) continue;
                    for (Index xx = 0; xx < w; ++xx) {
                        const Index sx = xx + kx - pad;
                        if (sx < 0 || sx >= w) continue;
                        (*cols)(row, yy * w + xx) = xv.at(c, sy, sx);
                    }
                }
            }

    Tensor out({cout, h, w});
    auto y = out.matrix(cout, h * w);
    y.noalias() = p.weight.value().matrix(cout, patch) * (*cols);
    y.colwise() += p.bias.value().data();

    return make_result(std::move(out), {x, p.weight, p.bias}, [cols, cin, h, w, k, pad, patch, cout](Node& n) {
        Node& X = in(n, 0);
        Node& W = in(n, 1);
        Node& B = in(n, 2);
        const auto dY = Eigen::Map<const RowMatrixXd>(n.grad.data(), cout, h * w);
        if (W.requires_grad)
            Eigen::Map<RowMatrixXd>(W.grad_buffer().data(), cout, patch).noalias() += dY * cols->transpose();
        if (B.requires_grad) B.grad_buffer() += dY.rowwise().sum();
        if (X.requires_grad) {
            const RowMatrixXd dcols = W.value.matrix(cout, patch).transpose() * dY;
            auto& g = X.grad_buffer();
            for (Index c = 0; c < cin; ++c)
                for (Index ky = 0; ky < k; ++ky)
                    for (Index kx = 0; kx < k; ++kx) {
                        const Index row = (c * k + ky) * k + kx;
                        for (Index yy = 0; yy < h; ++yy) {
                            const Index sy = yy + ky - pad;
                            if (sy < 0 || sy >= h) continue;
                            for (Index xx = 0; xx < w; ++xx) {
                                const Index sx = xx + kx - pad;
                                if (sx < 0 || sx >= w) continue;
                                g[(c * h + sy) * w + sx] += dcols(row, yy * w + xx);
                            }
                        }
                    }
        }
    });
}

namespace {

// Flat index map for shuffle: out[i] = in[src[i]].
std::vector<Index> shuffle_sources(Index c_out, Index h, Index w, Index r)
{
    std::vector<Index> src(static_cast<std::size_t>(c_out * h * r * w * r));
    const Index ho = h * r, wo = w * r;
    for (Index c = 0; c < c_out; ++c)
        for (Index oy = 0; oy < ho; ++oy)
            for (Index ox = 0; ox < wo; ++ox) {
                const Index ic = c * r * r + (oy % r) * r + (ox % r);
                src[static_cast<std::size_t>((c * ho + oy) * wo + ox)] = (ic * h + oy / r) * w + ox / r;
            }
    return src;
}

Var permute(const Var& x, Dims out_dims, std::vector<Index> src)
{
    Tensor out(std::move(out_dims));
    const auto& xv = x.value().data();
    for (std::size_t i = 0; i < src.size(); ++i) out[static_cast<Index>(i)] = xv[src[i]];
    return make_result(std::move(out), {x}, [src = std::move(src)](Node& n) {
        auto& g = in(n, 0).grad_buffer();
        for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += n.grad[static_cast<Index>(i)];
    });
}

} // namespace

Var pixel_shuffle(const Var& x, Index r)
{
    require_map(x, "pixel_shuffle");
    if (r <= 0 || x.dim(0) % (r * r) != 0)
        throw ShapeError("pixel_shuffle: channels " + std::to_string(x.dim(0)) + " not divisible by r^2 = " +
                         std::to_string(r * r));
    const Index c = x.dim(0) / (r * r), h = x.dim(1), w = x.dim(2);
    return permute(x, {c, h * r, w * r}, shuffle_sources(c, h, w, r));
}

Var pixel_unshuffle(const Var& x, Index r)
{
    require_map(x, "pixel_unshuffle");
    if (r <= 0 || x.dim(1) % r != 0 || x.dim(2) % r != 0)
        throw ShapeError("pixel_unshuffle: spatial dims not divisible by " + std::to_string(r));
    const Index c = x.dim(0), h = x.dim(1) / r, w = x.dim(2) / r;
    const auto fwd = shuffle_sources(c, h, w, r);
    std::vector<Index> src(fwd.size());
    for (std::size_t i = 0; i < fwd.size(); ++i) src[static_cast<std::size_t>(fwd[i])] = static_cast<Index>(i);
    return permute(x, {c * r * r, h, w}, std::move(src));
}

AttentionOutput cross_attention(const Var& q_in, const Var& kv_in, const AttentionParams& p)
{
    if (q_in.dims().size() != 2 || kv_in.dims().size() != 2 || q_in.dim(1) != p.width() ||
        kv_in.dim(1) != p.wk.in_features() || kv_in.dim(1) != p.wv.in_features())
        throw ShapeError("cross_attention: widths " + format_dims(q_in.dims()) + " / " + format_dims(kv_in.dims()) +
                         " do not match width " + std::to_string(p.width()));
    if (p.wk.out_features() != p.key_dim())
        throw ShapeError("cross_attention: query and key projections disagree on key_dim");
    const Var q = linear(q_in, p.wq);
    const Var k = linear(kv_in, p.wk);
    const Var v = linear(kv_in, p.wv);
    const Var scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(p.key_dim())));
    const Var attn = softmax_rows(scores);
    return {linear(matmul(attn, v), p.wout), attn};
}

SampleGrid base_grid(Index h_in, Index w_in, Index h_out, Index w_out)
{
    if (h_in <= 0 || w_in <= 0 || h_out <= 0 || w_out <= 0) throw ShapeError("base_grid: non-positive extent");
    if (h_out % h_in != 0 || w_out % w_in != 0 || h_out / h_in != w_out / w_in)
        throw ShapeError("base_grid: " + std::to_string(h_in) + "x" + std::to_string(w_in) + " -> " +
                         std::to_string(h_out) + "x" + std::to_string(w_out) + " is not an integer factor");
    const double r = static_cast<double>(h_out / h_in);
    Tensor g({2, h_out, w_out});
    for (Index i = 0; i < h_out; ++i)
        for (Index j = 0; j < w_out; ++j) {
            g.at(0, i, j) = (static_cast<double>(i) + 0.5) / r - 0.5;
            g.at(1, i, j) = (static_cast<double>(j) + 0.5) / r - 0.5;
        }
    return {Var::constant(std::move(g))};
}

namespace {

struct Tap {
    Index y0, y1, x0, x1;
    double fy, fx;
    bool y_inside, x_inside;
};

Tap make_tap(double y, double x, Index h, Index w)
{
    Tap t{};
    const double ymax = static_cast<double>(h - 1), xmax = static_cast<double>(w - 1);
    const double yc = std::clamp(y, 0.0, ymax);
    const double xc = std::clamp(x, 0.0, xmax);
    t.y0 = static_cast<Index>(std::floor(yc));
    t.x0 = static_cast<Index>(std::floor(xc));
    t.y1 = std::min(t.y0 + 1, h - 1);
    t.x1 = std::min(t.x0 + 1, w - 1);
    t.fy = yc - static_cast<double>(t.y0);
    t.fx = xc - static_cast<double>(t.x0);
    t.y_inside = y >= 0.0 && y <= ymax;
    t.x_inside = x >= 0.0 && x <= xmax;
    return t;
}

} // namespace

Var bilinear_sample(const Var& x, const SampleGrid& grid)
{
    require_map(x, "bilinear_sample");
    const Var& s = grid.coords;
    if (s.dims().size() != 3 || s.dim(0) != 2) throw ShapeError("bilinear_sample: grid must be 2xHxW");
    const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const Index ho = s.dim(1), wo = s.dim(2), npos = ho * wo;
    const auto& sv = s.value().data();
    if (!sv.allFinite()) throw std::domain_error("bilinear_sample: non-finite grid");

    auto taps = std::make_shared<std::vector<Tap>>(static_cast<std::size_t>(npos));
    for (Index p = 0; p < npos; ++p) (*taps)[static_cast<std::size_t>(p)] = make_tap(sv[p], sv[npos + p], h, w);

    Tensor out({c, ho, wo});
    const auto& xv = x.value().data();
    for (Index ch = 0; ch < c; ++ch) {
        const Index base = ch * h * w;
        for (Index p = 0; p < npos; ++p) {
            const Tap& t = (*taps)[static_cast<std::size_t>(p)];
            const double v00 = xv[base + t.y0 * w + t.x0], v01 = xv[base + t.y0 * w + t.x1];
            const double v10 = xv[base + t.y1 * w + t.x0], v11 = xv[base + t.y1 * w + t.x1];
            out[ch * npos + p] = (1.0 - t.fy) * ((1.0 - t.fx) * v00 + t.fx * v01) + t.fy * ((1.0 - t.fx) * v10 + t.fx * v11);
        }
    }

    return make_result(std::move(out), {x, s}, [taps, c, h, w, npos](Node& n) {
        Node& X = in(n, 0);
        Node& S = in(n, 1);
        const auto& xv = X.value.data();
        for (Index ch = 0; ch < c; ++ch) {
            const Index base = ch * h * w;
            for (Index p = 0; p < npos; ++p) {
                const Tap& t = (*taps)[static_cast<std::size_t>(p)];
                const double g = n.grad[ch * npos + p];
                if (g == 0.0) continue;
                if (X.requires_grad) {
                    auto& gx = X.grad_buffer();
                    gx[base + t.y0 * w + t.x0] += g * (1.0 - t.fy) * (1.0 - t.fx);
                    gx[base + t.y0 * w + t.x1] += g * (1.0 - t.fy) * t.fx;
                    gx[base + t.y1 * w + t.x0] += g * t.fy * (1.0 - t.fx);
                    gx[base + t.y1 * w + t.x1] += g * t.fy * t.fx;
                }
                if (S.requires_grad) {
                    const double v00 = xv[base + t.y0 * w + t.x0], v01 = xv[base + t.y0 * w + t.x1];
                    const double v10 = xv[base + t.y1 * w + t.x0], v11 = xv[base + t.y1 * w + t.x1];
                    auto& gs = S.grad_buffer();
                    if (t.y_inside) gs[p] += g * ((1.0 - t.fx) * (v10 - v00) + t.fx * (v11 - v01));
                    if (t.x_inside) gs[npos + p] += g * ((1.0 - t.fy) * (v01 - v00) + t.fy * (v11 - v10));
                }
            }
        }
    });
}

Var bilinear_resize(const Var& x, Index h_out, Index w_out)
{
    require_map(x, "bilinear_resize");
    if (x.dim(1) == h_out && x.dim(2) == w_out) return x;
    return bilinear_sample(x, base_grid(x.dim(1), x.dim(2), h_out, w_out));
}

Var map_to_tokens(const Var& x)
{
    require_map(x, "map_to_tokens");
    return transpose(reshape(x, {x.dim(0), x.dim(1) * x.dim(2)}));
}

Var tokens_to_map(const Var& tokens, Index h, Index w)
{
    if (tokens.dims().size() != 2 || tokens.dim(0) != h * w)
        throw ShapeError("tokens_to_map: " + format_dims(tokens.dims()) + " is not " + std::to_string(h * w) + " tokens");
    return reshape(transpose(tokens), {tokens.dim(1), h, w});
}

Var dynamic_upsample(const Var& x, const LinearParams& offset_proj, double alpha)
{
    require_map(x, "dynamic_upsample");
    constexpr Index r = 2;
    if (offset_proj.out_features() != 2 * r * r)
        throw ShapeError("dynamic_upsample: offset projection must produce 8 channels, got " +
                         std::to_string(offset_proj.out_features()));
    const Index h = x.dim(1), w = x.dim(2);
    const Var offsets = pixel_shuffle(tokens_to_map(linear(map_to_tokens(x), offset_proj), h, w), r);
    const SampleGrid g = base_grid(h, w, h * r, w * r);
    return bilinear_sample(x, {add(g.coords, scale(offsets, alpha))});
}

} // namespace dsffseg::nn
