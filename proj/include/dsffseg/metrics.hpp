// Copyright 2026 The dsffseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dsffseg/decoder.hpp"

#include <optional>
#include <span>
#include <string>

namespace dsffseg {

struct EvalRecord {
    Mask pred_mask;
    Mask gt_mask;
    bool gt_no_target = false;
    bool pred_no_target = false; // every token rejected
};

/// How one record enters the dataset-level scores.
struct GresContribution {
    double giou = 0.0;
    bool in_ciou = true; // false: excluded from the cIoU sums
    Index intersection = 0;
    Index union_ = 0;
};

/// Correct no-target: gIoU 1, excluded from cIoU.
/// Missed no-target: gIoU 0, predicted pixels join the union.
/// Otherwise plain mask IoU (1 when both masks are empty).
GresContribution gres_adjust(const EvalRecord& record);

/// Summed intersections over summed unions; nullopt when the union is empty.
std::optional<double> ciou(std::span<const EvalRecord> records);
double giou(std::span<const EvalRecord> records);
/// Share of no-target records that were rejected; nullopt without any.
std::optional<double> n_acc(std::span<const EvalRecord> records);

/// Inclusive pixel bounds.
struct BBox {
    Index x0, y0, x1, y1;
    friend bool operator==(const BBox&, const BBox&) = default;
};

std::optional<BBox> mask_to_bbox(const Mask& mask);
double box_iou(const BBox& a, const BBox& b);

struct BoxPair {
    BBox gt;
    std::optional<BBox> pred; // missing prediction counts as a miss
};

/// Fraction of pairs with box IoU strictly above 0.5.
double prec_at_05(std::span<const BoxPair> pairs);

/// Box pairs from the records that have a target.
std::vector<BoxPair> box_pairs(std::span<const EvalRecord> records);

struct MetricsReport {
    std::optional<double> ciou;
    std::optional<double> giou;
    std::optional<double> prec05;
    std::optional<double> n_acc;
};

MetricsReport score(std::span<const EvalRecord> records);

/// JSON object with keys ciou, giou, prec05, n_acc; absent metrics are omitted.
std::string to_json(const MetricsReport& report);
MetricsReport metrics_from_json(const std::string& text);

} // namespace dsffseg
