#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "semcorr/consistency.hpp"
#include "semcorr/image.hpp"

namespace semcorr {

struct PckResult {
    double alpha = 0.0;
    int correct = 0;
    int total = 0;
    double pck = 0.0;
};

/// Percentage of correct matches: a valid cell counts when the endpoint error
/// |pred - gt| is within alpha * max(h, w) grid cells.
inline PckResult pck(const FlowField& pred, const FlowField& gt, const ConfidenceMask& valid, double alpha) {
    if (pred.shape != gt.shape || valid.shape != pred.shape)
        throw std::invalid_argument("pck: shape mismatch");
    if (valid.count == 0) throw std::invalid_argument("no evaluable cells");
    const double threshold = alpha * std::max(pred.shape.rows, pred.shape.cols);
    PckResult r;
    r.alpha = alpha;
    r.total = valid.count;
    for (int i = 0; i < pred.shape.size(); ++i) {
        if (!valid(i)) continue;
        if ((pred(i) - gt(i)).norm() <= threshold) ++r.correct;
    }
    r.pck = static_cast<double>(r.correct) / static_cast<double>(r.total);
    return r;
}

/// Mean Euclidean flow error over valid cells, in grid cells.
inline double endpoint_error(const FlowField& pred, const FlowField& gt, const ConfidenceMask& valid) {
    if (pred.shape != gt.shape || valid.shape != pred.shape)
        throw std::invalid_argument("endpoint_error: shape mismatch");
    if (valid.count == 0) throw std::invalid_argument("no evaluable cells");
    double sum = 0.0;
    for (int i = 0; i < pred.shape.size(); ++i) {
        if (valid(i)) sum += (pred(i) - gt(i)).norm();
    }
    return sum / valid.count;
}

/// Gather warp: out(i) = img(i + flow(i)) when the lookup stays in-grid,
/// zero otherwise.
template <class Scalar>
ImageGridT<Scalar> warp(const ImageGridT<Scalar>& img, const FlowField& flow) {
    if (flow.to_shape != img.shape) throw std::invalid_argument("warp: shape mismatch");
    ImageGridT<Scalar> out(flow.shape, img.channels);
    for (int i = 0; i < flow.shape.size(); ++i) {
        const int src = apply_displacement(i, flow(i), flow.shape, img.shape);
        if (src != kOutOfGrid) out.values.row(i) = img.values.row(src);
    }
    return out;
}

inline std::string eval_csv_header() { return "alpha,correct,total,pck,mean_epe"; }

inline std::string eval_csv_row(const PckResult& r, double mean_epe) {
    return format_double(r.alpha) + "," + std::to_string(r.correct) + "," + std::to_string(r.total) + "," +
           format_double(r.pck) + "," + format_double(mean_epe);
}

}  // namespace semcorr
