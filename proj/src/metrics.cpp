// Copyright 2026 The dsffseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsffseg/metrics.hpp"

#include "json.hpp"

#include <algorithm>
#include <stdexcept>

namespace dsffseg {

namespace {

void require_nonempty(std::span<const EvalRecord> records, const char* what)
{
    if (records.empty()) throw std::invalid_argument(std::string(what) + ": empty record list");
}

} // namespace

GresContribution gres_adjust(const EvalRecord& r)
{
    if (r.pred_mask.rows() != r.gt_mask.rows() || r.pred_mask.cols() != r.gt_mask.cols())
        throw ShapeError("gres_adjust: prediction and ground truth differ in size");
    GresContribution out;
    if (r.gt_no_target) {
        if (r.pred_no_target) {
            out.giou = 1.0;
            out.in_ciou = false;
        } else {
            out.giou = 0.0;
            out.union_ = (r.pred_mask != 0).count();
        }
        return out;
    }
    const auto pred = r.pred_mask != 0;
    const auto gt = r.gt_mask != 0;
    out.intersection = (pred && gt).count();
    out.union_ = (pred || gt).count();
    out.giou = out.union_ == 0 ? 1.0 : static_cast<double>(out.intersection) / static_cast<double>(out.union_);
    return out;
}

std::optional<double> ciou(std::span<const EvalRecord> records)
{
    require_nonempty(records, "ciou");
    Index inter = 0, uni = 0;
    for (const auto& r : records) {
        const auto c = gres_adjust(r);
        if (!c.in_ciou) continue;
        inter += c.intersection;
        uni += c.union_;
    }
    if (uni == 0) return std::nullopt;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double giou(std::span<const EvalRecord> records)
{
    require_nonempty(records, "giou");
    double total = 0.0;
    for (const auto& r : records) total += gres_adjust(r).giou;
    return total / static_cast<double>(records.size());
}

std::optional<double> n_acc(std::span<const EvalRecord> records)
{
    Index empty = 0, correct = 0;
    for (const auto& r : records) {
        if (!r.gt_no_target) continue;
        ++empty;
        if (r.pred_no_target) ++correct;
    }
    if (empty == 0) return std::nullopt;
    return static_cast<double>(correct) / static_cast<double>(empty);
}

std::optional<BBox> mask_to_bbox(const Mask& mask)
{
    std::optional<BBox> box;
    for (Index y = 0; y < mask.rows(); ++y)
        for (Index x = 0; x < mask.cols(); ++x) {
            if (!mask(y, x)) continue;
            if (!box) {
                box = BBox{x, y, x, y};
                continue;
            }
            box->x0 = std::min(box->x0, x);
            box->y0 = std::min(box->y0, y);
            box->x1 = std::max(box->x1, x);
            box->y1 = std::max(box->y1, y);
        }
    return box;
}

double box_iou(const BBox& a, const BBox& b)
{
    const auto area = [](const BBox& r) { return (r.x1 - r.x0 + 1) * (r.y1 - r.y0 + 1); };
    const Index iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0) + 1;
    const Index ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0) + 1;
    const Index inter = (iw > 0 && ih > 0) ? iw * ih : 0;
    return static_cast<double>(inter) / static_cast<double>(area(a) + area(b) - inter);
}

double prec_at_05(std::span<const BoxPair> pairs)
{
    if (pairs.empty()) throw std::invalid_argument("prec_at_05: empty pair list");
    Index hits = 0;
    for (const auto& p : pairs)
        if (p.pred && box_iou(p.gt, *p.pred) > 0.5) ++hits;
    return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

std::vector<BoxPair> box_pairs(std::span<const EvalRecord> records)
{
    std::vector<BoxPair> pairs;
    for (const auto& r : records) {
        if (r.gt_no_target) continue;
        const auto gt = mask_to_bbox(r.gt_mask);
        if (!gt) continue;
        pairs.push_back({*gt, r.pred_no_target ? std::nullopt : mask_to_bbox(r.pred_mask)});
    }
    return pairs;
}

MetricsReport score(std::span<const EvalRecord> records)
{
    MetricsReport m;
    if (records.empty()) return m;
    m.ciou = ciou(records);
    m.giou = giou(records);
    const auto pairs = box_pairs(records);
    if (!pairs.empty()) m.prec05 = prec_at_05(pairs);
    m.n_acc = n_acc(records);
    return m;
}

std::string to_json(const MetricsReport& report)
{
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    if (report.ciou) j["ciou"] = *report.ciou;
    if (report.giou) j["giou"] = *report.giou;
    if (report.prec05) j["prec05"] = *report.prec05;
    if (report.n_acc) j["n_acc"] = *report.n_acc;
    return j.dump(2) + "\n";
}

MetricsReport metrics_from_json(const std::string& text)
{
    const auto j = nlohmann::json::parse(text);
    MetricsReport m;
    const auto get = [&](const char* key) -> std::optional<double> {
        if (j.contains(key)) return j.at(key).get<double>();
        return std::nullopt;
    };
    m.ciou = get("ciou");
    m.giou = get("giou");
    m.prec05 = get("prec05");
    m.n_acc = get("n_acc");
    return m;
}

} // namespace dsffseg
