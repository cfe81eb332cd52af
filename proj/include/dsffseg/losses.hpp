// Copyright 2026 The dsffseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dsffseg/autodiff.hpp"

#include <span>

namespace dsffseg {

struct LossConfig {
    double lambda_text = 1.0;
    double lambda_mask = 1.0;
    double bce_eps = 1e-7;
    double dice_smooth = 1.0;
};

/// Mean per-pixel binary cross-entropy; probs are clamped to [eps, 1 - eps].
Var bce_loss(const Var& probs, const Tensor& gt, double eps);

/// 1 - (2 sum(p g) + smooth) / (sum(p) + sum(g) + smooth).
Var dice_loss(const Var& probs, const Tensor& gt, double smooth);

/// Mean negative log-softmax probability of each row's target class.
Var ce_loss(const Var& logits, std::span<const int> targets);

/// lambda_text * text + lambda_mask * mask.
Var total_loss(const Var& text_loss, const Var& mask_loss, const LossConfig& cfg);

} // namespace dsffseg
