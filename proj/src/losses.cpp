// Copyright 2026 The dsffseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsffseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dsffseg {

namespace {

void require_match(const Var& probs, const Tensor& gt, const char* op)
{
    if (probs.dims() != gt.dims())
        throw ShapeError(std::string(op) + ": shape mismatch " + format_dims(probs.dims()) + " vs " +
                         format_dims(gt.dims()));
}

} // namespace

Var bce_loss(const Var& probs, const Tensor& gt, double eps)
{
    require_match(probs, gt, "bce_loss");
    const auto& p = probs.value().data();
    const auto& g = gt.data();
    const double n = static_cast<double>(p.size());
    double total = 0.0;
    for (Index i = 0; i < p.size(); ++i) {
        const double pc = std::clamp(p[i], eps, 1.0 - eps);
        total -= g[i] * std::log(pc) + (1.0 - g[i]) * std::log(1.0 - pc);
    }
    return make_result(Tensor::scalar(total / n), {probs}, [gt, eps, n](detail::Node& node) {
        auto& in = *node.inputs[0];
        const auto& p = in.value.data();
        const auto& g = gt.data();
        auto& dp = in.grad_buffer();
        const double scale = node.grad[0] / n;
        for (Index i = 0; i < p.size(); ++i) {
            if (p[i] < eps || p[i] > 1.0 - eps) continue;
            dp[i] -= scale * (g[i] / p[i] - (1.0 - g[i]) / (1.0 - p[i]));
        }
    });
}

Var dice_loss(const Var& probs, const Tensor& gt, double smooth)
{
    require_match(probs, gt, "dice_loss");
    const auto& p = probs.value().data();
    const auto& g = gt.data();
    const double inter = p.dot(g);
    const double denom = p.sum() + g.sum() + smooth;
    const double numer = 2.0 * inter + smooth;
    return make_result(Tensor::scalar(1.0 - numer / denom), {probs}, [gt, numer, denom](detail::Node& node) {
        auto& in = *node.inputs[0];
        const double s = node.grad[0] / (denom * denom);
        in.grad_buffer().array() -= s * (2.0 * denom * gt.data().array() - numer);
    });
}

Var ce_loss(const Var& logits, std::span<const int> targets)
{
    if (logits.dims().size() != 2 || logits.dim(0) != static_cast<Index>(targets.size()))
        throw ShapeError("ce_loss: logits " + format_dims(logits.dims()) + " vs " + std::to_string(targets.size()) +
                         " targets");
    const Index rows = logits.dim(0), k = logits.dim(1);
    for (int t : targets)
        if (t < 0 || t >= k) throw std::out_of_range("ce_loss: target " + std::to_string(t) + " outside [0, " + std::to_string(k) + ")");
    const auto x = logits.value().matrix();
    RowMatrixXd softmax(rows, k);
    double total = 0.0;
    for (Index r = 0; r < rows; ++r) {
        const double m = x.row(r).maxCoeff();
        const double lse = m + std::log((x.row(r).array() - m).exp().sum());
        softmax.row(r) = (x.row(r).array() - lse).exp().matrix();
        total += lse - x(r, targets[static_cast<std::size_t>(r)]);
    }
    std::vector<int> tgt(targets.begin(), targets.end());
    return make_result(Tensor::scalar(total / static_cast<double>(rows)), {logits},
                       [softmax = std::move(softmax), tgt = std::move(tgt)](detail::Node& node) {
                           auto& in = *node.inputs[0];
                           const Index rows = softmax.rows(), k = softmax.cols();
                           auto dx = Eigen::Map<RowMatrixXd>(in.grad_buffer().data(), rows, k);
                           const double s = node.grad[0] / static_cast<double>(rows);
                           dx += s * softmax;
                           for (Index r = 0; r < rows; ++r) dx(r, tgt[static_cast<std::size_t>(r)]) -= s;
                       });
}

Var total_loss(const Var& text_loss, const Var& mask_loss, const LossConfig& cfg)
{
    return add(scale(text_loss, cfg.lambda_text), scale(mask_loss, cfg.lambda_mask));
}

} // namespace dsffseg
