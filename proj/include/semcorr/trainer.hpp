#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "semcorr/aggregation.hpp"
#include "semcorr/evaluation.hpp"
#include "semcorr/feature.hpp"
#include "semcorr/loss.hpp"
#include "semcorr/optim.hpp"
#include "semcorr/synthetic.hpp"

namespace semcorr {

/// Raised when the training loop meets a non-finite loss or parameter.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    std::uint64_t seed = 7;
    int steps = 2000;
    int h = 16;
    int w = 16;
    int d = 16;           // feature dimension
    int channels = 4;     // image channels
    int patch_size = 1;   // reserved hook; only 1x1 is implemented
    int kernel_size = 3;  // 4D conv kernel size

    double lr_feature = 3e-5;
    double lr_agg = 3e-6;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;

    double gamma = 0.1;
    double lambda_c = 0.5;
    double lambda_a = 0.5;
    double alpha1 = 0.1;
    double alpha2 = 0.05;
    char loss_config = 'd';

    int eval_every = 100;  // held-out eval cadence; 0 = endpoints only
    int heldout_pairs = 32;
    double projector_init = 0.05;  // uniform weight init bound
    PairParams pair;

    GridShape grid() const { return {h, w}; }
    ConsistencyParams consistency() const { return {alpha1, alpha2}; }
    LossParams loss() const { return {gamma, lambda_c, lambda_a}; }
    LossSelection selection() const { return LossSelection::table_row(loss_config); }

    void validate() const {
        if (steps < 1) throw std::invalid_argument("config: steps must be >= 1");
        if (h < 1 || w < 1) throw std::invalid_argument("config: grid dims must be >= 1");
        if (d < 1 || channels < 1) throw std::invalid_argument("config: d and channels must be >= 1");
        if (patch_size != 1) throw std::invalid_argument("config: only patch_size=1 is implemented");
        if (kernel_size < 1 || kernel_size % 2 == 0)
            throw std::invalid_argument("config: kernel_size must be odd");
        if (lr_feature < 0 || lr_agg < 0) throw std::invalid_argument("config: learning rates must be >= 0");
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
            throw std::invalid_argument("config: betas must lie in [0, 1)");
        if (eps <= 0) throw std::invalid_argument("config: eps must be positive");
        if (weight_decay < 0) throw std::invalid_argument("config: weight_decay must be >= 0");
        if (gamma <= 0) throw std::invalid_argument("config: gamma must be positive");
        if (lambda_c < 0 || lambda_a < 0) throw std::invalid_argument("config: lambdas must be >= 0");
        if (alpha1 < 0 || alpha2 < 0) throw std::invalid_argument("config: alphas must be >= 0");
        if (loss_config < 'a' || loss_config > 'd')
            throw std::invalid_argument("config: loss_config must be one of a,b,c,d");
        if (eval_every < 0) throw std::invalid_argument("config: eval_every must be >= 0");
        if (heldout_pairs < 1) throw std::invalid_argument("config: heldout_pairs must be >= 1");
        if (pair.noise_sigma < 0 || pair.jitter_prob < 0 || pair.jitter_prob > 1 ||
            pair.max_translation < 0 || pair.affine_amp < 0 || pair.waves_per_channel < 1)
            throw std::invalid_argument("config: bad synthetic pair parameters");
    }
};

using ConfigMap = std::map<std::string, std::string>;

/// Flat key=value config: one pair per line, '#' starts a comment, blank
/// lines ignored. Later lines win.
inline ConfigMap parse_config_text(const std::string& text) {
    ConfigMap out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto strip = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            const auto e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        };
        const std::string stripped = strip(line);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
        const std::string key = strip(stripped.substr(0, eq));
        const std::string value = strip(stripped.substr(eq + 1));
        if (key.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
        out[key] = value;
    }
    return out;
}

/// Keys consumed by build_train_config. The CLI accepts a few extra
/// path-valued keys on top of these.
inline const std::vector<std::string>& train_config_keys() {
    static const std::vector<std::string> keys = {
        "seed",       "steps",        "h",          "w",           "d",
        "channels",   "patch_size",   "kernel_size", "lr_feature", "lr_agg",
        "beta1",      "beta2",        "eps",        "weight_decay", "gamma",
        "lambda_c",   "lambda_a",     "alpha1",     "alpha2",      "loss_config",
        "eval_every", "heldout_pairs", "projector_init", "noise_sigma", "max_translation",
        "affine_amp", "jitter_prob",  "waves_per_channel"};
    return keys;
}

inline TrainConfig build_train_config(const ConfigMap& map) {
    TrainConfig cfg;
    const auto geti = [&](const std::string& k, int& dst) {
        if (auto it = map.find(k); it != map.end()) dst = std::stoi(it->second);
    };
    const auto getd = [&](const std::string& k, double& dst) {
        if (auto it = map.find(k); it != map.end()) dst = std::stod(it->second);
    };
    if (auto it = map.find("seed"); it != map.end()) cfg.seed = std::stoull(it->second);
    geti("steps", cfg.steps);
    geti("h", cfg.h);
    geti("w", cfg.w);
    geti("d", cfg.d);
    geti("channels", cfg.channels);
    geti("patch_size", cfg.patch_size);
    geti("kernel_size", cfg.kernel_size);
    getd("lr_feature", cfg.lr_feature);
    getd("lr_agg", cfg.lr_agg);
    getd("beta1", cfg.beta1);
    getd("beta2", cfg.beta2);
    getd("eps", cfg.eps);
    getd("weight_decay", cfg.weight_decay);
    getd("gamma", cfg.gamma);
    getd("lambda_c", cfg.lambda_c);
    getd("lambda_a", cfg.lambda_a);
    getd("alpha1", cfg.alpha1);
    getd("alpha2", cfg.alpha2);
    if (auto it = map.find("loss_config"); it != map.end()) {
        if (it->second.size() != 1) throw std::invalid_argument("config: loss_config must be one of a,b,c,d");
        cfg.loss_config = it->second[0];
    }
    geti("eval_every", cfg.eval_every);
    geti("heldout_pairs", cfg.heldout_pairs);
    getd("projector_init", cfg.projector_init);
    getd("noise_sigma", cfg.pair.noise_sigma);
    geti("max_translation", cfg.pair.max_translation);
    getd("affine_amp", cfg.pair.affine_amp);
    getd("jitter_prob", cfg.pair.jitter_prob);
    geti("waves_per_channel", cfg.pair.waves_per_channel);
    cfg.validate();
    return cfg;
}

struct TrainedModel {
    LinearProjector projector;
    Conv4dKernel kernel;
};

/// Seeded initialization: small uniform projector and a near-identity kernel.
inline TrainedModel init_model(const TrainConfig& cfg) {
    Rng rng(cfg.seed + 2);
    TrainedModel model;
    model.projector = LinearProjector::random(cfg.channels, cfg.d, rng, cfg.projector_init);
    model.kernel = Conv4dKernel::near_identity(cfg.kernel_size, rng);
    return model;
}

struct PipelineVolumes {
    CostVolume raw;
    CostVolume agg;
};

inline PipelineVolumes forward_volumes(const ImageGrid& source, const ImageGrid& target,
                                       const TrainedModel& model) {
    const FeatureMap fs = l2_normalize(extract_features(source, model.projector));
    const FeatureMap ft = l2_normalize(extract_features(target, model.projector));
    PipelineVolumes v;
    v.raw = correlate(fs, ft);
    v.agg = aggregate(v.raw, model.kernel);
    return v;
}

/// One optimization step's forward and backward pass. Accumulates parameter
/// gradients into the model; the caller applies the update.
inline LossReport forward_backward(const SyntheticPair& pair, TrainedModel& model, const TrainConfig& cfg) {
    const FeatureMap fs_lin = extract_features(pair.source, model.projector);
    const FeatureMap ft_lin = extract_features(pair.target, model.projector);
    const FeatureMap fs = l2_normalize(fs_lin);
    const FeatureMap ft = l2_normalize(ft_lin);
    const CostVolume c_raw = correlate(fs, ft);
    const CostVolume c_agg = aggregate(c_raw, model.kernel);
    if (!c_raw.values.allFinite() || !c_agg.values.allFinite())
        throw DivergenceError("diverged: non-finite cost volume");

    const auto jl = ablation_loss(c_raw, c_agg, cfg.consistency(), cfg.loss(), cfg.selection());

    MatrixX<double> grad_c = aggregate_backward(c_raw, model.kernel, jl.grad_agg, c_agg);
    grad_c += jl.grad_raw;
    const auto [grad_fs, grad_ft] = correlate_backward(fs, ft, grad_c);
    extract_features_backward(pair.source, model.projector, l2_normalize_backward(fs_lin, grad_fs));
    extract_features_backward(pair.target, model.projector, l2_normalize_backward(ft_lin, grad_ft));
    return jl.report;
}

struct EvalPoint {
    int step = 0;
    double pck_raw = 0.0;
    double pck_agg = 0.0;
    double epe_raw = 0.0;
    double epe_agg = 0.0;
};

inline std::vector<SyntheticPair> make_heldout_set(const TrainConfig& cfg) {
    Rng rng(cfg.seed + 1);
    std::vector<SyntheticPair> pairs;
    pairs.reserve(static_cast<std::size_t>(cfg.heldout_pairs));
    for (int i = 0; i < cfg.heldout_pairs; ++i)
        pairs.push_back(generate_pair(rng, cfg.grid(), cfg.channels, cfg.pair));
    return pairs;
}

/// Micro-averaged held-out PCK@0.1 and endpoint error for WTA flows from the
/// raw and aggregated volumes.
inline EvalPoint evaluate_heldout(const TrainedModel& model, const std::vector<SyntheticPair>& heldout,
                                  int step, double alpha = 0.1) {
    EvalPoint pt;
    pt.step = step;
    long correct_raw = 0, correct_agg = 0, total = 0;
    double err_raw = 0.0, err_agg = 0.0;
    for (const SyntheticPair& pair : heldout) {
        const PipelineVolumes v = forward_volumes(pair.source, pair.target, model);
        const FlowField f_raw = wta_flow(v.raw);
        const FlowField f_agg = wta_flow(v.agg);
        const PckResult p_raw = pck(f_raw, pair.gt_flow, pair.valid, alpha);
        const PckResult p_agg = pck(f_agg, pair.gt_flow, pair.valid, alpha);
        correct_raw += p_raw.correct;
        correct_agg += p_agg.correct;
        total += p_raw.total;
        err_raw += endpoint_error(f_raw, pair.gt_flow, pair.valid) * p_raw.total;
        err_agg += endpoint_error(f_agg, pair.gt_flow, pair.valid) * p_agg.total;
    }
    pt.pck_raw = static_cast<double>(correct_raw) / static_cast<double>(total);
    pt.pck_agg = static_cast<double>(correct_agg) / static_cast<double>(total);
    pt.epe_raw = err_raw / static_cast<double>(total);
    pt.epe_agg = err_agg / static_cast<double>(total);
    return pt;
}

struct TrainResult {
    TrainedModel model;
    std::vector<std::pair<int, LossReport>> metrics;  // one row per step
    std::vector<EvalPoint> heldout_log;               // step 0, cadence points, final step
};

/// Metrics CSV, one row per training step.
inline std::string metrics_to_csv(const TrainResult& r) {
    std::string out = loss_report_csv_header() + "\n";
    for (const auto& [step, report] : r.metrics) out += loss_report_csv_row(step, report) + "\n";
    return out;
}

inline std::string heldout_to_csv(const TrainResult& r) {
    std::string out = "step,pck_raw,pck_agg,epe_raw,epe_agg\n";
    for (const EvalPoint& p : r.heldout_log)
        out += std::to_string(p.step) + "," + format_double(p.pck_raw) + "," + format_double(p.pck_agg) +
               "," + format_double(p.epe_raw) + "," + format_double(p.epe_agg) + "\n";
    return out;
}

/// Joint training loop: one synthetic pair per step, shared projector for
/// both images, decoupled AdamW groups for projector vs. kernel.
inline TrainResult train_model(const TrainConfig& cfg, TrainedModel model) {
    cfg.validate();
    TrainResult result;
    const std::vector<SyntheticPair> heldout = make_heldout_set(cfg);
    Rng pair_rng(cfg.seed);

    const AdamWParams feat_hp{cfg.lr_feature, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay};
    const AdamWParams agg_hp{cfg.lr_agg, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay};
    AdamWState st_weight, st_bias, st_kweights, st_kbias;

    result.heldout_log.push_back(evaluate_heldout(model, heldout, 0));
    result.metrics.reserve(static_cast<std::size_t>(cfg.steps));

    for (int step = 1; step <= cfg.steps; ++step) {
        const SyntheticPair pair = generate_pair(pair_rng, cfg.grid(), cfg.channels, cfg.pair);
        const LossReport report = forward_backward(pair, model, cfg);
        if (!std::isfinite(report.total))
            throw DivergenceError("diverged: non-finite loss at step " + std::to_string(step));

        try {
            adamw_step<double>(as_flat(model.projector.weight), as_flat(model.projector.weight_grad),
                               st_weight, feat_hp);
            adamw_step<double>(model.projector.bias, model.projector.bias_grad, st_bias, feat_hp);
            adamw_step<double>(model.kernel.weights, model.kernel.weight_grad, st_kweights, agg_hp);
            Eigen::Map<VectorX<double>> kb(&model.kernel.bias, 1);
            Eigen::Map<const VectorX<double>> kbg(&model.kernel.bias_grad, 1);
            adamw_step<double>(kb, kbg, st_kbias, agg_hp);
        } catch (const std::runtime_error& e) {
            throw DivergenceError(std::string(e.what()) + " at step " + std::to_string(step));
        }
        model.projector.zero_grad();
        model.kernel.zero_grad();
        if (!model.projector.weight.allFinite() || !model.projector.bias.allFinite() ||
            !model.kernel.weights.allFinite() || !std::isfinite(model.kernel.bias))
            throw DivergenceError("diverged: non-finite parameters at step " + std::to_string(step));

        result.metrics.emplace_back(step, report);
        if (cfg.eval_every > 0 && step % cfg.eval_every == 0 && step != cfg.steps)
            result.heldout_log.push_back(evaluate_heldout(model, heldout, step));
    }
    result.heldout_log.push_back(evaluate_heldout(model, heldout, cfg.steps));
    result.model = std::move(model);
    return result;
}

inline TrainResult train(const TrainConfig& cfg) { return train_model(cfg, init_model(cfg)); }

/// Projector checkpoint: magic "LPRJ", in_features and dim as u32 LE, then
/// row-major weight doubles followed by the bias doubles, all IEEE-754 LE.
inline std::string projector_to_bytes(const LinearProjector& p) {
    std::string out = "LPRJ";
    append_u32_le(out, static_cast<std::uint32_t>(p.weight.rows()));
    append_u32_le(out, static_cast<std::uint32_t>(p.weight.cols()));
    for (Eigen::Index r = 0; r < p.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < p.weight.cols(); ++c) append_f64_le(out, p.weight(r, c));
    for (Eigen::Index i = 0; i < p.bias.size(); ++i) append_f64_le(out, p.bias[i]);
    return out;
}

inline LinearProjector projector_from_bytes(const std::string& bytes) {
    if (bytes.size() < 4 || bytes.substr(0, 4) != "LPRJ")
        throw std::runtime_error("bad projector checkpoint magic");
    std::size_t pos = 4;
    const int in_features = static_cast<int>(read_u32_le(bytes, pos));
    const int dim = static_cast<int>(read_u32_le(bytes, pos));
    LinearProjector p(in_features, dim);
    for (int r = 0; r < in_features; ++r)
        for (int c = 0; c < dim; ++c) p.weight(r, c) = read_f64_le(bytes, pos);
    for (int i = 0; i < dim; ++i) p.bias[i] = read_f64_le(bytes, pos);
    return p;
}

inline void save_projector(const std::filesystem::path& path, const LinearProjector& p) {
    write_file_atomic(path, projector_to_bytes(p));
}

inline LinearProjector load_projector(const std::filesystem::path& path) {
    return projector_from_bytes(read_file(path));
}

}  // namespace semcorr
