// Copyright 2026 The dsffseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsffseg/train.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dsffseg {

using json = nlohmann::ordered_json;

// ---- config ---------------------------------------------------------------

void TrainConfig::validate() const
{
    if (steps < 0 || batch_size <= 0) throw std::invalid_argument("train config: steps/batch_size must be positive");
    if (learning_rate < 0.0) throw std::invalid_argument("train config: negative learning rate");
    if (loss.lambda_text < 0.0 || loss.lambda_mask < 0.0) throw std::invalid_argument("train config: negative lambda");
    decoder.validate();
    if (data.image_size != decoder.final_mask_hw.height || data.image_size != decoder.final_mask_hw.width)
        throw std::invalid_argument("train config: final_mask_hw must equal the image size");
    if (data.min_objects < 1 || data.max_objects < data.min_objects || data.max_objects > synth::kMaxTargets)
        throw std::invalid_argument("train config: object counts must satisfy 1 <= min <= max <= 3");
}

namespace {

json grid_json(GridSize g) { return json::array({g.height, g.width}); }

GridSize grid_from(const json& j)
{
    if (!j.is_array() || j.size() != 2) throw std::invalid_argument("grid sizes are [height, width] arrays");
    return {j[0].get<Index>(), j[1].get<Index>()};
}

template <typename T>
void read(const json& j, const char* key, T& out)
{
    if (j.contains(key)) out = j.at(key).get<T>();
}

} // namespace

TrainConfig train_config_from_json(const std::string& text)
{
    const json j = json::parse(text);
    TrainConfig c;
    read(j, "steps", c.steps);
    read(j, "batch_size", c.batch_size);
    read(j, "learning_rate", c.learning_rate);
    read(j, "seed", c.seed);
    read(j, "beta1", c.beta1);
    read(j, "beta2", c.beta2);
    read(j, "adam_eps", c.adam_eps);
    if (j.contains("loss")) {
        const auto& l = j.at("loss");
        read(l, "lambda_text", c.loss.lambda_text);
        read(l, "lambda_mask", c.loss.lambda_mask);
        read(l, "bce_eps", c.loss.bce_eps);
        read(l, "dice_smooth", c.loss.dice_smooth);
    }
    if (j.contains("decoder")) {
        const auto& d = j.at("decoder");
        read(d, "c_llm", c.decoder.c_llm);
        read(d, "c", c.decoder.c);
        if (d.contains("grid_detail")) c.decoder.grid_detail = grid_from(d.at("grid_detail"));
        if (d.contains("grid_semantic")) c.decoder.grid_semantic = grid_from(d.at("grid_semantic"));
        read(d, "head_mid_channels", c.decoder.head_mid_channels);
        read(d, "head_shuffle_r", c.decoder.head_shuffle_r);
        if (d.contains("final_mask_hw")) c.decoder.final_mask_hw = grid_from(d.at("final_mask_hw"));
        if (d.contains("variant")) c.decoder.variant = parse_variant(d.at("variant").get<std::string>());
        read(d, "alpha", c.decoder.alpha);
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        read(d, "image_size", c.data.image_size);
        read(d, "p_empty", c.data.p_empty);
        read(d, "min_objects", c.data.min_objects);
        read(d, "max_objects", c.data.max_objects);
        read(d, "min_radius", c.data.min_radius);
        read(d, "max_radius", c.data.max_radius);
        read(d, "noise_amplitude", c.data.noise_amplitude);
    }
    if (j.contains("stub")) {
        const auto& s = j.at("stub");
        read(s, "patch", c.stub.patch);
        read(s, "seed", c.stub.seed);
        read(s, "grounding_gain", c.stub.grounding_gain);
        read(s, "presence_gain", c.stub.presence_gain);
    }
    return c;
}

namespace {

json config_json(const TrainConfig& c)
{
    json j;
    j["steps"] = c.steps;
    j["batch_size"] = c.batch_size;
    j["learning_rate"] = c.learning_rate;
    j["seed"] = c.seed;
    j["beta1"] = c.beta1;
    j["beta2"] = c.beta2;
    j["adam_eps"] = c.adam_eps;
    j["loss"] = {{"lambda_text", c.loss.lambda_text},
                 {"lambda_mask", c.loss.lambda_mask},
                 {"bce_eps", c.loss.bce_eps},
                 {"dice_smooth", c.loss.dice_smooth}};
    j["decoder"] = {{"c_llm", c.decoder.c_llm},
                    {"c", c.decoder.c},
                    {"grid_detail", grid_json(c.decoder.grid_detail)},
                    {"grid_semantic", grid_json(c.decoder.grid_semantic)},
                    {"head_mid_channels", c.decoder.head_mid_channels},
                    {"head_shuffle_r", c.decoder.head_shuffle_r},
                    {"final_mask_hw", grid_json(c.decoder.final_mask_hw)},
                    {"variant", std::string(to_string(c.decoder.variant))},
                    {"alpha", c.decoder.alpha}};
    j["data"] = {{"image_size", c.data.image_size},
                 {"p_empty", c.data.p_empty},
                 {"min_objects", c.data.min_objects},
                 {"max_objects", c.data.max_objects},
                 {"min_radius", c.data.min_radius},
                 {"max_radius", c.data.max_radius},
                 {"noise_amplitude", c.data.noise_amplitude}};
    j["stub"] = {{"patch", c.stub.patch},
                 {"seed", c.stub.seed},
                 {"grounding_gain", c.stub.grounding_gain},
                 {"presence_gain", c.stub.presence_gain}};
    return j;
}

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return std::move(ss).str();
}

} // namespace

std::string to_json(const TrainConfig& cfg) { return config_json(cfg).dump(2) + "\n"; }

TrainConfig load_train_config(const std::filesystem::path& path) { return train_config_from_json(read_file(path)); }

// ---- model ----------------------------------------------------------------

Model init_model(const TrainConfig& cfg)
{
    cfg.validate();
    Model m;
    m.config = cfg;
    Rng rng(mix64(cfg.seed ^ 0x1A17EA5EDULL));
    m.decoder = build_variant(cfg.decoder, rng);
    m.rej_head = nn::make_linear(rng, cfg.decoder.c, 2);
    m.stub = synth::make_stub(cfg.stub, cfg.decoder, cfg.data.image_size);
    return m;
}

std::vector<std::pair<std::string, Var>> model_parameters(const Model& m)
{
    auto params = named_parameters(m.decoder);
    params.emplace_back("rej_head.weight", m.rej_head.weight);
    params.emplace_back("rej_head.bias", m.rej_head.bias);
    return params;
}

Var rej_head(const Var& t1_seg, const nn::LinearParams& p) { return nn::linear(t1_seg, p); }

std::vector<bool> rej_flags(const Tensor& logits)
{
    if (logits.rank() != 2 || logits.dim(1) != 2) throw ShapeError("rej_flags: expected S x 2 logits");
    std::vector<bool> flags(static_cast<std::size_t>(logits.dim(0)));
    for (Index s = 0; s < logits.dim(0); ++s) flags[static_cast<std::size_t>(s)] = logits[s * 2] > logits[s * 2 + 1];
    return flags;
}

// ---- optimizer ------------------------------------------------------------

Adam::Adam(std::vector<Var> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps)
{
    for (const auto& p : params_) {
        m_.push_back(Eigen::VectorXd::Zero(p.size()));
        v_.push_back(Eigen::VectorXd::Zero(p.size()));
    }
}

void Adam::step()
{
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const Eigen::VectorXd g = params_[i].grad();
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
        auto& w = params_[i].mutable_value().data();
        w.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
}

void Adam::zero_grad()
{
    for (auto& p : params_) p.zero_grad();
}

// ---- training -------------------------------------------------------------

SampleLoss sample_loss(const Model& m, const synth::StubFeatures& f, const synth::SynthSample& s)
{
    const auto& cfg = m.config;
    const auto trace = decoder_trace(Var::constant(f.t1_img), Var::constant(f.t2_img), Var::constant(f.seg.tokens),
                                     m.decoder, cfg.decoder);
    const Var text = ce_loss(rej_head(trace.t1_seg, m.rej_head), s.text_target_ids);

    Var mask;
    int seg_tokens = 0;
    for (std::size_t k = 0; k < trace.logits.size(); ++k) {
        if (s.text_target_ids[k] != 1) continue;
        const Var probs = sigmoid(trace.logits[k]);
        const Var term = add(bce_loss(probs, f.gt_union, cfg.loss.bce_eps), dice_loss(probs, f.gt_union, cfg.loss.dice_smooth));
        mask = mask.defined() ? add(mask, term) : term;
        ++seg_tokens;
    }
    if (seg_tokens == 0)
        mask = Var::constant(Tensor::scalar(0.0));
    else
        mask = scale(mask, 1.0 / seg_tokens);
    return {total_loss(text, mask, cfg.loss), text, mask};
}

TrainResult train(const TrainConfig& cfg)
{
    TrainResult result{init_model(cfg), {}};
    Model& m = result.model;
    std::vector<Var> params;
    for (auto& [name, v] : model_parameters(m)) params.push_back(v);
    Adam opt(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);

    const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);
    const auto run_step = [&](Index step, LossPoint& point) {
        Tape tape;
        Var total;
        {
            Tape::Recording rec(tape);
            for (Index b = 0; b < cfg.batch_size; ++b) {
                const auto sample =
                    synth::sample_at(cfg.seed, static_cast<std::uint64_t>(step * cfg.batch_size + b), cfg.data);
                const auto loss = sample_loss(m, synth::featurize(sample, m.stub), sample);
                total = total.defined() ? add(total, loss.total) : loss.total;
                point.text_loss += loss.text.value()[0] * inv_batch;
                point.mask_loss += loss.mask.value()[0] * inv_batch;
            }
            total = scale(total, inv_batch);
        }
        point.loss = total.value()[0];
        if (!std::isfinite(point.loss)) throw std::runtime_error("non-finite loss");
        opt.zero_grad();
        tape.backward(total);
        opt.step();
    };
    for (Index step = 0; step < cfg.steps; ++step) {
        LossPoint point{step, 0.0, 0.0, 0.0};
        try {
            run_step(step, point);
        } catch (const std::exception& e) {
            throw std::runtime_error("training failed at step " + std::to_string(step) + ": " + e.what());
        }
        result.curve.push_back(point);
    }
    return result;
}

std::string curve_to_csv(const std::vector<LossPoint>& curve)
{
    std::string out = "step,loss,text_loss,mask_loss\n";
    char line[128];
    for (const auto& p : curve) {
        std::snprintf(line, sizeof line, "%lld,%.17g,%.17g,%.17g\n", static_cast<long long>(p.step), p.loss, p.text_loss,
                      p.mask_loss);
        out += line;
    }
    return out;
}

// ---- evaluation -----------------------------------------------------------

ModelPrediction predict(const Model& m, const synth::SynthSample& s)
{
    auto f = synth::featurize(s, m.stub);
    const auto& cfg = m.config.decoder;
    const auto seg = Var::constant(f.seg.tokens);
    const auto t1_seg = compress(Var::constant(f.t2_img), seg, m.decoder).t1_seg;
    f.seg.rej_flags = rej_flags(rej_head(t1_seg, m.rej_head).value());
    return {decoder_forward(f.t1_img, f.t2_img, f.seg, m.decoder, cfg), f.seg.rej_flags};
}

EvalRecord evaluate_sample(const Model& m, const synth::SynthSample& s)
{
    const auto pred = predict(m, s);
    EvalRecord r;
    r.pred_mask = pred.masks.merged_binary;
    r.gt_mask = s.target_union();
    r.gt_no_target = s.no_target;
    r.pred_no_target = std::all_of(pred.rej_flags.begin(), pred.rej_flags.end(), [](bool f) { return f; });
    return r;
}

MetricsReport evaluate(const Model& m, Index n_samples, std::uint64_t seed)
{
    if (n_samples <= 0) throw std::invalid_argument("evaluate: need at least one sample");
    std::vector<EvalRecord> records;
    records.reserve(static_cast<std::size_t>(n_samples));
    for (Index i = 0; i < n_samples; ++i)
        records.push_back(evaluate_sample(m, synth::sample_at(seed, static_cast<std::uint64_t>(i), m.config.data)));
    return score(records);
}

// ---- checkpoint -----------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[8] = {'D', 'S', 'F', 'F', 'C', 'K', 'P', 'T'};

void put_le(std::string& out, std::uint64_t v, int bytes)
{
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_le(const std::string& in, std::size_t pos, int bytes)
{
    if (pos + static_cast<std::size_t>(bytes) > in.size()) throw std::runtime_error("checkpoint: truncated header");
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= std::uint64_t{static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)])} << (8 * i);
    return v;
}

} // namespace

std::string encode_checkpoint(const Model& m)
{
    json manifest;
    manifest["version"] = kCheckpointVersion;
    manifest["config"] = config_json(m.config);
    json tensors = json::object();
    std::string blobs;
    for (const auto& [name, v] : model_parameters(m)) {
        tensors[name] = {{"offset", blobs.size()}, {"shape", v.dims()}};
        blobs += encode_dsft(v.value());
    }
    manifest["tensors"] = tensors;
    const std::string text = manifest.dump();

    std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
    put_le(out, kCheckpointVersion, 4);
    put_le(out, text.size(), 8);
    out += text;
    out += blobs;
    return out;
}

Model decode_checkpoint(const std::string& bytes)
{
    if (bytes.size() < 20 || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
        throw std::runtime_error("checkpoint: bad magic");
    const auto version = get_le(bytes, 8, 4);
    if (version != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    const auto len = get_le(bytes, 12, 8);
    if (20 + len > bytes.size()) throw std::runtime_error("checkpoint: truncated manifest");
    const json manifest = json::parse(bytes.substr(20, len));
    const std::size_t blob_start = 20 + len;

    const TrainConfig cfg = train_config_from_json(manifest.at("config").dump());
    Model m = init_model(cfg);
    const auto& tensors = manifest.at("tensors");
    const auto params = model_parameters(m);
    if (tensors.size() != params.size())
        throw std::runtime_error("checkpoint: tensor count does not match the configured variant");
    for (const auto& [name, v] : params) {
        if (!tensors.contains(name)) throw std::runtime_error("checkpoint: missing tensor " + name);
        const auto& entry = tensors.at(name);
        const auto offset = entry.at("offset").get<std::size_t>();
        if (blob_start + offset > bytes.size()) throw std::runtime_error("checkpoint: offset out of range for " + name);
        Tensor t = decode_dsft(bytes.substr(blob_start + offset));
        if (t.dims() != v.dims() || entry.at("shape").get<Dims>() != v.dims())
            throw std::runtime_error("checkpoint: shape mismatch for " + name + ": " + format_dims(t.dims()) + " vs " +
                                     format_dims(v.dims()));
        Var handle = v;
        handle.mutable_value() = std::move(t);
    }
    return m;
}

void save_checkpoint(const std::filesystem::path& path, const Model& m)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    const std::string bytes = encode_checkpoint(m);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Model load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

// ---- ablation -------------------------------------------------------------

namespace {

MetricsReport mean_report(const std::vector<MetricsReport>& reports)
{
    MetricsReport out;
    const auto avg = [&](std::optional<double> MetricsReport::*field) -> std::optional<double> {
        double total = 0.0;
        int n = 0;
        for (const auto& r : reports)
            if (r.*field) {
                total += *(r.*field);
                ++n;
            }
        if (n == 0) return std::nullopt;
        return total / n;
    };
    out.ciou = avg(&MetricsReport::ciou);
    out.giou = avg(&MetricsReport::giou);
    out.prec05 = avg(&MetricsReport::prec05);
    out.n_acc = avg(&MetricsReport::n_acc);
    return out;
}

json report_json(const MetricsReport& r) { return json::parse(to_json(r)); }

} // namespace

std::vector<AblationEntry> ablate(const TrainConfig& cfg, int n_seeds, Index n_eval)
{
    if (n_seeds <= 0) throw std::invalid_argument("ablate: need at least one seed");
    std::vector<AblationEntry> entries;
    for (Variant v : {Variant::DetailOnly, Variant::SemanticOnly, Variant::Concat, Variant::Dsff}) {
        AblationEntry e{v, {}, {}, 0};
        for (int k = 0; k < n_seeds; ++k) {
            TrainConfig run = cfg;
            run.decoder.variant = v;
            run.seed = cfg.seed + static_cast<std::uint64_t>(k);
            const auto trained = train(run);
            e.params = param_count(trained.model.decoder);
            e.per_seed.push_back(evaluate(trained.model, n_eval, run.seed + 1));
        }
        e.mean = mean_report(e.per_seed);
        entries.push_back(std::move(e));
    }
    return entries;
}

std::string ablation_to_json(const std::vector<AblationEntry>& entries)
{
    json j = json::object();
    for (const auto& e : entries) {
        json seeds = json::array();
        for (const auto& r : e.per_seed) seeds.push_back(report_json(r));
        j[std::string(to_string(e.variant))] = {{"params", e.params}, {"mean", report_json(e.mean)}, {"per_seed", seeds}};
    }
    return j.dump(2) + "\n";
}

} // namespace dsffseg
