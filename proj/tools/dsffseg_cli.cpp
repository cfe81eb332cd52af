// Copyright 2026 The dsffseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsffseg/gradcheck.hpp"
#include "dsffseg/train.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace dsffseg;

namespace {

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << text;
}

template <typename Writer>
void write_binary(const fs::path& path, Writer&& writer)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    writer(os);
}

GrayImage mask_image(const Mask& m)
{
    GrayImage img{m.rows(), m.cols(), std::vector<std::uint8_t>(static_cast<std::size_t>(m.size()))};
    for (Index y = 0; y < m.rows(); ++y)
        for (Index x = 0; x < m.cols(); ++x) img.pixels[static_cast<std::size_t>(y * m.cols() + x)] = m(y, x) ? 255 : 0;
    return img;
}

// Detail-grid query nearest the target centroid, or the grid center when empty.
Index heatmap_query(const Mask& target, GridSize detail)
{
    double sy = 0.0, sx = 0.0;
    Index n = 0;
    for (Index y = 0; y < target.rows(); ++y)
        for (Index x = 0; x < target.cols(); ++x)
            if (target(y, x)) {
                sy += static_cast<double>(y);
                sx += static_cast<double>(x);
                ++n;
            }
    double cy = 0.5 * static_cast<double>(target.rows()), cx = 0.5 * static_cast<double>(target.cols());
    if (n > 0) {
        cy = sy / static_cast<double>(n);
        cx = sx / static_cast<double>(n);
    }
    const Index qy = std::min<Index>(detail.height - 1, static_cast<Index>(cy * static_cast<double>(detail.height) /
                                                                           static_cast<double>(target.rows())));
    const Index qx = std::min<Index>(detail.width - 1, static_cast<Index>(cx * static_cast<double>(detail.width) /
                                                                          static_cast<double>(target.cols())));
    return qy * detail.width + qx;
}

int cmd_gradcheck(std::uint64_t seed, double tol)
{
    bool ok = true;
    for (const auto& r : run_gradcheck(seed)) {
        const bool pass = r.max_rel_error < tol;
        ok = ok && pass;
        std::printf("%-18s #%d  max_rel_err %.3e  %s\n", r.op.c_str(), r.instance, r.max_rel_error,
                    pass ? "PASS" : "FAIL");
    }
    std::printf("%s\n", ok ? "gradcheck: all operations passed" : "gradcheck: FAILED");
    return ok ? 0 : 1;
}

int cmd_params(const fs::path& config, const std::string& variant)
{
    TrainConfig cfg = load_train_config(config);
    if (!variant.empty()) cfg.decoder.variant = parse_variant(variant);
    Rng rng(cfg.seed);
    std::printf("%lld\n", static_cast<long long>(param_count(build_variant(cfg.decoder, rng))));
    return 0;
}

int cmd_train(const fs::path& config, const fs::path& out, const fs::path& curve)
{
    const auto result = train(load_train_config(config));
    save_checkpoint(out, result.model);
    if (!curve.empty()) write_text(curve, curve_to_csv(result.curve));
    if (!result.curve.empty())
        std::printf("final loss %.6f after %zu steps\n", result.curve.back().loss, result.curve.size());
    return 0;
}

int cmd_eval(const fs::path& ckpt, Index n, std::uint64_t seed, const fs::path& report)
{
    const std::string json = to_json(evaluate(load_checkpoint(ckpt), n, seed));
    write_text(report, json);
    std::fputs(json.c_str(), stdout);
    return 0;
}

int cmd_export(const fs::path& ckpt, std::uint64_t seed, const fs::path& outdir)
{
    const Model m = load_checkpoint(ckpt);
    const auto sample = synth::sample_at(seed, 0, m.config.data);
    const auto pred = predict(m, sample);
    fs::create_directories(outdir);

    write_binary(outdir / "image.ppm", [&](std::ostream& os) { synth::write_ppm(os, sample.image); });
    for (std::size_t k = 0; k < pred.masks.per_token_probs.size(); ++k) {
        const Mask mask = pred.rej_flags[k] ? Mask::Zero(sample.image.dim(1), sample.image.dim(2))
                                            : binarize(pred.masks.per_token_probs[k]);
        write_binary(outdir / ("pred_mask_" + std::to_string(k) + ".pgm"),
                     [&](std::ostream& os) { write_pgm(os, mask_image(mask)); });
    }
    for (std::size_t k = 0; k < sample.gt_masks.size(); ++k)
        write_binary(outdir / ("gt_mask_" + std::to_string(k) + ".pgm"),
                     [&](std::ostream& os) { write_pgm(os, mask_image(sample.gt_masks[k])); });
    if (pred.masks.attn_map) {
        const auto& d = m.config.decoder;
        const Index query = heatmap_query(sample.target_union(), d.grid_detail);
        const auto heat = export_attention_heatmap(*pred.masks.attn_map, query, d.grid_semantic.height,
                                                   d.grid_semantic.width);
        write_binary(outdir / "attention.pgm", [&](std::ostream& os) { write_pgm(os, heat); });
    }
    std::printf("expression %d, %zu seg tokens, %zu gt masks -> %s\n", sample.expression_id,
                pred.masks.per_token_probs.size(), sample.gt_masks.size(), outdir.string().c_str());
    return 0;
}

int cmd_ablate(const fs::path& config, int seeds, Index n, const fs::path& report)
{
    const std::string json = ablation_to_json(ablate(load_train_config(config), seeds, n));
    write_text(report, json);
    std::fputs(json.c_str(), stdout);
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"DSFF referring-segmentation decoder toolkit"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    double tol = 1e-4;
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
    gradcheck->add_option("--seed", seed, "Random seed");
    gradcheck->add_option("--tol", tol, "Maximum relative error");

    fs::path config, out, curve, ckpt, report, outdir;
    std::string variant;
    auto* params = app.add_subcommand("params", "Print the decoder parameter count");
    params->add_option("--config", config, "Config JSON")->required();
    params->add_option("--variant", variant, "Decoder variant")
        ->check(CLI::IsMember({"dsff", "concat", "semantic", "detail"}));

    auto* train_cmd = app.add_subcommand("train", "Train on the synthetic benchmark");
    train_cmd->add_option("--config", config, "Config JSON")->required();
    train_cmd->add_option("--out", out, "Checkpoint path")->required();
    train_cmd->add_option("--curve", curve, "Loss curve CSV");

    Index n = 500;
    auto* eval = app.add_subcommand("eval", "Score a checkpoint on held-out samples");
    eval->add_option("--ckpt", ckpt, "Checkpoint path")->required();
    eval->add_option("--n", n, "Number of samples");
    eval->add_option("--seed", seed, "Sample seed")->required();
    eval->add_option("--report", report, "Metrics JSON")->required();

    auto* export_cmd = app.add_subcommand("export", "Write image, masks and attention heatmap for one sample");
    export_cmd->add_option("--ckpt", ckpt, "Checkpoint path")->required();
    export_cmd->add_option("--seed", seed, "Sample seed")->required();
    export_cmd->add_option("--outdir", outdir, "Output directory")->required();

    int seeds = 3;
    auto* ablate_cmd = app.add_subcommand("ablate", "Train and score all four decoder variants");
    ablate_cmd->add_option("--config", config, "Config JSON")->required();
    ablate_cmd->add_option("--seeds", seeds, "Seeds per variant");
    ablate_cmd->add_option("--n", n, "Held-out samples per run");
    ablate_cmd->add_option("--report", report, "Ablation JSON")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gradcheck) return cmd_gradcheck(seed, tol);
        if (*params) return cmd_params(config, variant);
        if (*train_cmd) return cmd_train(config, out, curve);
        if (*eval) return cmd_eval(ckpt, n, seed, report);
        if (*export_cmd) return cmd_export(ckpt, seed, outdir);
        if (*ablate_cmd) return cmd_ablate(config, seeds, n, report);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
