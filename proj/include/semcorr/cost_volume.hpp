#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <stdexcept>
#include <type_traits>
#include <string>
#include <utility>

#include "semcorr/feature.hpp"

namespace semcorr {

enum class CostKind { raw, aggregated };

/// Pairwise similarity over flattened grid positions: values(i, j) scores
/// source cell i against target cell j. The 4D view (h_s, w_s, h_t, w_t)
/// exists only inside the aggregation module.
template <class Scalar>
struct CostVolumeT {
    GridShape shape_s;
    GridShape shape_t;
    MatrixX<Scalar> values;  // (h_s*w_s) x (h_t*w_t)
    CostKind kind = CostKind::raw;
};

using CostVolume = CostVolumeT<double>;

/// C(i, j) = D_s(i) . D_t(j). Both maps must be L2-normalized so the dot
/// product is a cosine score.
template <class Scalar>
CostVolumeT<Scalar> correlate(const FeatureMapT<Scalar>& ds, const FeatureMapT<Scalar>& dt) {
    if (ds.dim != dt.dim) throw std::invalid_argument("correlate: feature dim mismatch");
    if (!ds.normalized || !dt.normalized) throw std::invalid_argument("correlate: features must be normalized");
    CostVolumeT<Scalar> c;
    c.shape_s = ds.shape;
    c.shape_t = dt.shape;
    c.values.noalias() = ds.values * dt.values.transpose();
    c.kind = CostKind::raw;
    return c;
}

/// Reverse-mode of the bilinear form: grad_ds(i) = sum_j grad_C(i,j) D_t(j),
/// grad_dt(j) = sum_i grad_C(i,j) D_s(i).
template <class Scalar>
std::pair<MatrixX<Scalar>, MatrixX<Scalar>> correlate_backward(const FeatureMapT<Scalar>& ds,
                                                               const FeatureMapT<Scalar>& dt,
                                                               const std::type_identity_t<MatrixX<Scalar>>& grad_c) {
    if (ds.dim != dt.dim) throw std::invalid_argument("correlate_backward: feature dim mismatch");
    if (grad_c.rows() != ds.shape.size() || grad_c.cols() != dt.shape.size())
        throw std::invalid_argument("correlate_backward: grad shape mismatch");
    MatrixX<Scalar> grad_ds = grad_c * dt.values;
    MatrixX<Scalar> grad_dt = grad_c.transpose() * ds.values;
    return {std::move(grad_ds), std::move(grad_dt)};
}

template <class Scalar>
CostVolumeT<Scalar> transpose(const CostVolumeT<Scalar>& c) {
    CostVolumeT<Scalar> out;
    out.shape_s = c.shape_t;
    out.shape_t = c.shape_s;
    out.values = c.values.transpose();
    out.kind = c.kind;
    return out;
}

template <class Scalar>
std::string cost_volume_to_csv(const CostVolumeT<Scalar>& c) {
    std::string out;
    for (Eigen::Index i = 0; i < c.values.rows(); ++i) {
        for (Eigen::Index j = 0; j < c.values.cols(); ++j) {
            if (j) out += ",";
            out += format_double(static_cast<double>(c.values(i, j)));
        }
        out += "\n";
    }
    return out;
}

inline void write_cost_volume_csv(const std::filesystem::path& path, const CostVolume& c) {
    write_file_atomic(path, cost_volume_to_csv(c));
}

}  // namespace semcorr
