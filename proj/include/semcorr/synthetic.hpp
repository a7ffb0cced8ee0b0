#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "semcorr/consistency.hpp"
#include "semcorr/image.hpp"
#include "semcorr/rng.hpp"

namespace semcorr {

/// Knobs of the synthetic pair generator. Defaults give a matchable but
/// ambiguous task: a 1/f-style texture whose coarse bands dominate, warped by
/// a small affine field with sparse jitter.
struct PairParams {
    double noise_sigma = 0.05;   // additive Gaussian noise, fraction of source value range
    int max_translation = 2;     // per-axis translation bound, cells
    double affine_amp = 0.08;    // bound on |A - I| entries
    double jitter_prob = 0.08;   // per-cell chance of an extra +-1 cell offset
    int waves_per_channel = 3;   // plane waves summed per channel
};

template <class Scalar>
struct SyntheticPairT {
    ImageGridT<Scalar> source;
    ImageGridT<Scalar> target;
    FlowField gt_flow;      // ground-truth source->target displacement
    ConfidenceMask valid;   // cells whose warp stays in-grid and survives collisions
};

using SyntheticPair = SyntheticPairT<double>;

/// Smooth random texture: each channel is a sum of random plane waves from a
/// channel-dependent frequency band. Lower channels carry large, high-energy
/// structure; higher channels carry finer, lower-energy detail.
inline ImageGrid smooth_texture(Rng& rng, GridShape shape, int channels, int waves_per_channel) {
    struct Band {
        double period_lo, period_hi, amp;
    };
    const Band bands[4] = {
        {4.5, 6.0, 1.00},
        {3.5, 4.5, 1.00},
        {2.8, 3.5, 1.00},
        {2.3, 2.8, 1.00},
    };
    constexpr double kTwoPi = 2.0 * 3.14159265358979323846;

    ImageGrid img(shape, channels);
    for (int c = 0; c < channels; ++c) {
        const Band& band = bands[c % 4];
        for (int m = 0; m < waves_per_channel; ++m) {
            const double period = rng.uniform(band.period_lo, band.period_hi);
            const double theta = rng.uniform(0.0, kTwoPi);
            const double fy = std::cos(theta) / period;
            const double fx = std::sin(theta) / period;
            const double phase = rng.uniform(0.0, kTwoPi);
            const double amp = band.amp * rng.uniform(0.6, 1.0);
            for (int i = 0; i < shape.size(); ++i) {
                const Coord p = flat_to_coord(i, shape);
                img.values(i, c) += amp * std::cos(kTwoPi * (fy * p.row + fx * p.col) + phase);
            }
        }
    }
    return img;
}

/// Push the source through an integer displacement field. Target cells are
/// written in raster order (last writer wins); source cells that leave the
/// grid or lose a collision are invalid. Uncovered target cells get fresh
/// uniform noise over the source value range, then every target cell gets
/// additive Gaussian noise of noise_sigma * range.
inline SyntheticPair apply_warp(const ImageGrid& source, const FlowField& gt_flow, Rng& rng,
                                double noise_sigma) {
    if (gt_flow.shape != source.shape || gt_flow.to_shape != source.shape)
        throw std::invalid_argument("apply_warp: flow grid mismatch");
    SyntheticPair pair;
    pair.source = source;
    pair.gt_flow = gt_flow;
    pair.valid = ConfidenceMask(source.shape);
    pair.target = ImageGrid(source.shape, source.channels);

    const double lo = source.values.minCoeff();
    const double hi = source.values.maxCoeff();
    const double range = hi - lo;

    const int n = source.shape.size();
    std::vector<int> writer(static_cast<std::size_t>(n), kOutOfGrid);
    for (int i = 0; i < n; ++i) {
        const int t = apply_displacement(i, gt_flow(i), source.shape);
        if (t != kOutOfGrid) writer[static_cast<std::size_t>(t)] = i;
    }
    for (int t = 0; t < n; ++t) {
        const int w = writer[static_cast<std::size_t>(t)];
        if (w != kOutOfGrid) {
            pair.target.values.row(t) = source.values.row(w);
        } else {
            for (int c = 0; c < source.channels; ++c) pair.target.values(t, c) = rng.uniform(lo, hi);
        }
    }
    for (int i = 0; i < n; ++i) {
        const int t = apply_displacement(i, gt_flow(i), source.shape);
        if (t != kOutOfGrid && writer[static_cast<std::size_t>(t)] == i) pair.valid.set(i, true);
    }
    if (noise_sigma > 0.0) {
        const double sigma = noise_sigma * range;
        for (int t = 0; t < n; ++t)
            for (int c = 0; c < source.channels; ++c) pair.target.values(t, c) += sigma * rng.normal();
    }
    return pair;
}

/// Random integer affine-plus-jitter displacement field about the grid center.
inline FlowField random_warp_field(Rng& rng, GridShape shape, const PairParams& params) {
    FlowField flow(shape, shape);
    const int ty = rng.uniform_int(-params.max_translation, params.max_translation);
    const int tx = rng.uniform_int(-params.max_translation, params.max_translation);
    double a[2][2];
    for (auto& row : a)
        for (double& v : row) v = rng.uniform(-params.affine_amp, params.affine_amp);
    const double cy = 0.5 * (shape.rows - 1);
    const double cx = 0.5 * (shape.cols - 1);
    for (int i = 0; i < shape.size(); ++i) {
        const Coord p = flat_to_coord(i, shape);
        const double ry = p.row - cy;
        const double rx = p.col - cx;
        int dy = ty + static_cast<int>(std::lround(a[0][0] * ry + a[0][1] * rx));
        int dx = tx + static_cast<int>(std::lround(a[1][0] * ry + a[1][1] * rx));
        if (rng.uniform() < params.jitter_prob) {
            dy += rng.uniform_int(-1, 1);
            dx += rng.uniform_int(-1, 1);
        }
        flow(i) = {dy, dx};
    }
    return flow;
}

inline SyntheticPair generate_pair(Rng& rng, GridShape shape, int channels, const PairParams& params) {
    const ImageGrid source = smooth_texture(rng, shape, channels, params.waves_per_channel);
    const FlowField field = random_warp_field(rng, shape, params);
    return apply_warp(source, field, rng, params.noise_sigma);
}

inline SyntheticPair generate_pair(Rng& rng, GridShape shape, int channels) {
    return generate_pair(rng, shape, channels, PairParams{});
}

}  // namespace semcorr
