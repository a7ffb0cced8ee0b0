#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "semcorr/trainer.hpp"

namespace semcorr {

/// Max relative errors between analytic gradients and central finite
/// differences for each differentiable stage.
struct GradCheckResult {
    double ccl = 0.0;        // ccl_term w.r.t. cost-volume entries
    double correlate = 0.0;  // correlate backward w.r.t. feature entries
    double conv = 0.0;       // 4D conv backward w.r.t. kernel, bias, input
    double end_to_end = 0.0; // full pipeline w.r.t. projector and kernel params

    bool pass() const { return ccl < 1e-4 && correlate < 1e-4 && conv < 1e-4 && end_to_end < 1e-3; }
};

namespace detail {

inline double rel_err(double analytic, double numeric) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / scale;
}

/// Central difference of f around *x with step h.
inline double central_diff(double* x, double h, const std::function<double()>& f) {
    const double saved = *x;
    *x = saved + h;
    const double up = f();
    *x = saved - h;
    const double down = f();
    *x = saved;
    return (up - down) / (2.0 * h);
}

constexpr double kFdStep = 1e-5;

}  // namespace detail

/// FD check of ccl_term on a seeded random volume with its own WTA labels and
/// consistency mask held fixed.
inline double gradcheck_ccl(std::uint64_t seed, double gamma = 0.1) {
    Rng rng(seed);
    CostVolume vol;
    vol.shape_s = {3, 3};
    vol.shape_t = {3, 3};
    vol.kind = CostKind::raw;
    vol.values = MatrixX<double>::Zero(9, 9);
    for (int i = 0; i < 9; ++i)
        for (int j = 0; j < 9; ++j) vol.values(i, j) = rng.uniform(-1.0, 1.0);
    const FlowsAndMask fm = mask_and_flows(vol, ConsistencyParams{});

    const auto analytic = ccl_term(vol, fm.fwd, fm.mask, gamma);
    double worst = 0.0;
    for (int i = 0; i < 9; ++i) {
        for (int j = 0; j < 9; ++j) {
            const double fd = detail::central_diff(&vol.values(i, j), detail::kFdStep, [&] {
                return static_cast<double>(ccl_term(vol, fm.fwd, fm.mask, gamma).loss);
            });
            worst = std::max(worst, detail::rel_err(analytic.grad(i, j), fd));
        }
    }
    return worst;
}

/// FD check of correlate_backward w.r.t. every feature entry, probing
/// L = sum(G .* correlate(ds, dt)) for a fixed random G.
inline double gradcheck_correlate(std::uint64_t seed) {
    Rng rng(seed);
    const GridShape shape{3, 3};
    const int dim = 4;
    FeatureMap ds, dt;
    for (FeatureMap* f : {&ds, &dt}) {
        f->shape = shape;
        f->dim = dim;
        f->values = MatrixX<double>::Zero(shape.size(), dim);
        for (int i = 0; i < shape.size(); ++i)
            for (int c = 0; c < dim; ++c) f->values(i, c) = rng.uniform(-1.0, 1.0);
        *f = l2_normalize(*f);
    }
    MatrixX<double> probe(shape.size(), shape.size());
    for (int i = 0; i < shape.size(); ++i)
        for (int j = 0; j < shape.size(); ++j) probe(i, j) = rng.uniform(-1.0, 1.0);

    const auto [grad_ds, grad_dt] = correlate_backward(ds, dt, probe);
    const auto loss = [&] { return (probe.array() * correlate(ds, dt).values.array()).sum(); };
    double worst = 0.0;
    for (FeatureMap* f : {&ds, &dt}) {
        const MatrixX<double>& grad = (f == &ds) ? grad_ds : grad_dt;
        for (int i = 0; i < shape.size(); ++i) {
            for (int c = 0; c < dim; ++c) {
                const double fd = detail::central_diff(&f->values(i, c), detail::kFdStep, loss);
                worst = std::max(worst, detail::rel_err(grad(i, c), fd));
            }
        }
    }
    return worst;
}

/// FD check of aggregate_backward w.r.t. kernel weights, bias, and every
/// input entry. Seeds are advanced until all pre-activations sit clear of the
/// ReLU kink.
inline double gradcheck_conv(std::uint64_t seed) {
    for (int attempt = 0; attempt < 64; ++attempt, seed += 1000) {
        Rng rng(seed);
        CostVolume c;
        c.shape_s = {3, 3};
        c.shape_t = {3, 3};
        c.values = MatrixX<double>::Zero(9, 9);
        for (int i = 0; i < 9; ++i)
            for (int j = 0; j < 9; ++j) c.values(i, j) = rng.uniform(-1.0, 1.0);
        Conv4dKernel kernel = Conv4dKernel::delta(3);
        for (Eigen::Index i = 0; i < kernel.weights.size(); ++i) kernel.weights[i] += rng.uniform(-0.2, 0.2);
        kernel.bias = rng.uniform(-0.2, 0.2);

        const CostVolume pre = conv4d(c, kernel);
        if (pre.values.array().abs().minCoeff() < 1e-3) continue;  // too close to the kink

        MatrixX<double> probe(9, 9);
        for (int i = 0; i < 9; ++i)
            for (int j = 0; j < 9; ++j) probe(i, j) = rng.uniform(-1.0, 1.0);
        const auto loss = [&] { return (probe.array() * aggregate(c, kernel).values.array()).sum(); };

        Conv4dKernel grads = kernel;
        grads.zero_grad();
        const MatrixX<double> grad_c = aggregate_backward(c, grads, probe);

        double worst = 0.0;
        for (Eigen::Index i = 0; i < kernel.weights.size(); ++i) {
            const double fd = detail::central_diff(&kernel.weights[i], detail::kFdStep, loss);
            worst = std::max(worst, detail::rel_err(grads.weight_grad[i], fd));
        }
        worst = std::max(worst, detail::rel_err(grads.bias_grad,
                                                detail::central_diff(&kernel.bias, detail::kFdStep, loss)));
        for (int i = 0; i < 9; ++i) {
            for (int j = 0; j < 9; ++j) {
                const double fd = detail::central_diff(&c.values(i, j), detail::kFdStep, loss);
                worst = std::max(worst, detail::rel_err(grad_c(i, j), fd));
            }
        }
        return worst;
    }
    throw std::runtime_error("gradcheck_conv: no seed with clear ReLU margins found");
}

namespace detail {

/// True when every WTA argmax, mask decision, and ReLU pre-activation has
/// margin to spare, so an FD step cannot flip a discrete branch.
inline bool branches_stable(const CostVolume& c_raw, const CostVolume& c_agg, const CostVolume& pre,
                            const ConsistencyParams& cons, double margin) {
    const auto argmax_margin_ok = [&](const CostVolume& v) {
        for (int i = 0; i < v.shape_s.size(); ++i) {
            double best = -1e300, second = -1e300;
            for (int j = 0; j < v.shape_t.size(); ++j) {
                const double x = v.values(i, j);
                if (x > best) {
                    second = best;
                    best = x;
                } else if (x > second) {
                    second = x;
                }
            }
            if (v.shape_t.size() > 1 && best - second < margin) return false;
        }
        return true;
    };
    const auto mask_margin_ok = [&](const CostVolume& v) {
        const FlowField fwd = wta_flow(v);
        const FlowField bwd = wta_flow(transpose(v));
        for (int i = 0; i < fwd.shape.size(); ++i) {
            const int t = apply_displacement(i, fwd(i), fwd.shape, bwd.shape);
            if (t == kOutOfGrid) continue;
            const double lhs = (fwd(i) + bwd(t)).squared_norm();
            const double rhs = cons.alpha1 * (fwd(i).squared_norm() + bwd(t).squared_norm()) + cons.alpha2;
            if (std::abs(lhs - rhs) < margin) return false;
        }
        return true;
    };
    if (!argmax_margin_ok(c_raw) || !argmax_margin_ok(c_agg)) return false;
    const CostVolume c_raw_t = transpose(c_raw);
    const CostVolume c_agg_t = transpose(c_agg);
    if (!argmax_margin_ok(c_raw_t) || !argmax_margin_ok(c_agg_t)) return false;
    if (!mask_margin_ok(c_raw) || !mask_margin_ok(c_agg)) return false;
    return pre.values.array().abs().minCoeff() >= margin;
}

}  // namespace detail

/// FD check of the full pipeline (projector -> correlate -> aggregate ->
/// joint loss) w.r.t. every projector and kernel parameter. Pseudo-labels and
/// masks are recomputed inside the probe; seeds are advanced until all
/// discrete branches have enough margin that the probe stays on the same
/// piece of the piecewise-smooth loss.
inline double gradcheck_end_to_end(std::uint64_t seed) {
    const TrainConfig base = [] {
        TrainConfig cfg;
        cfg.h = 3;
        cfg.w = 3;
        cfg.d = 4;
        cfg.channels = 3;
        cfg.projector_init = 0.5;
        return cfg;
    }();

    for (int attempt = 0; attempt < 64; ++attempt, seed += 1000) {
        TrainConfig cfg = base;
        cfg.seed = seed;
        Rng pair_rng(cfg.seed);
        const SyntheticPair pair = generate_pair(pair_rng, cfg.grid(), cfg.channels, cfg.pair);
        TrainedModel model = init_model(cfg);

        const auto total_loss = [&] {
            const PipelineVolumes v = forward_volumes(pair.source, pair.target, model);
            return ablation_loss(v.raw, v.agg, cfg.consistency(), cfg.loss(), cfg.selection()).report.total;
        };

        {
            const FeatureMap fs = l2_normalize(extract_features(pair.source, model.projector));
            const FeatureMap ft = l2_normalize(extract_features(pair.target, model.projector));
            const CostVolume c_raw = correlate(fs, ft);
            const CostVolume pre = conv4d(c_raw, model.kernel);
            CostVolume c_agg = pre;
            c_agg.values = c_agg.values.cwiseMax(0.0);
            c_agg.kind = CostKind::aggregated;
            if (!detail::branches_stable(c_raw, c_agg, pre, cfg.consistency(), 1e-3)) continue;
            const FlowsAndMask raw_fm = mask_and_flows(c_raw, cfg.consistency());
            const FlowsAndMask agg_fm = mask_and_flows(c_agg, cfg.consistency());
            if (raw_fm.mask.count == 0 || agg_fm.mask.count == 0) continue;
        }

        model.projector.zero_grad();
        model.kernel.zero_grad();
        forward_backward(pair, model, cfg);

        double worst = 0.0;
        for (Eigen::Index i = 0; i < model.projector.weight.size(); ++i) {
            const double fd =
                detail::central_diff(model.projector.weight.data() + i, detail::kFdStep, total_loss);
            worst = std::max(worst, detail::rel_err(model.projector.weight_grad.data()[i], fd));
        }
        for (Eigen::Index i = 0; i < model.projector.bias.size(); ++i) {
            const double fd =
                detail::central_diff(model.projector.bias.data() + i, detail::kFdStep, total_loss);
            worst = std::max(worst, detail::rel_err(model.projector.bias_grad[i], fd));
        }
        for (Eigen::Index i = 0; i < model.kernel.weights.size(); ++i) {
            const double fd =
                detail::central_diff(model.kernel.weights.data() + i, detail::kFdStep, total_loss);
            worst = std::max(worst, detail::rel_err(model.kernel.weight_grad[i], fd));
        }
        worst = std::max(worst, detail::rel_err(model.kernel.bias_grad,
                                                detail::central_diff(&model.kernel.bias, detail::kFdStep,
                                                                     total_loss)));
        return worst;
    }
    throw std::runtime_error("gradcheck_end_to_end: no seed with stable branches found");
}

inline GradCheckResult run_gradcheck(std::uint64_t seed) {
    GradCheckResult r;
    r.ccl = gradcheck_ccl(seed);
    r.correlate = gradcheck_correlate(seed);
    r.conv = gradcheck_conv(seed);
    r.end_to_end = gradcheck_end_to_end(seed);
    return r;
}

}  // namespace semcorr
