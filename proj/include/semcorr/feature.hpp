#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <type_traits>

#include "semcorr/image.hpp"
#include "semcorr/rng.hpp"

namespace semcorr {

/// Per-cell descriptor grid: h*w rows of dimension `dim`. `normalized` marks
/// rows as unit-length (zero rows stay zero and keep the flag honest).
template <class Scalar>
struct FeatureMapT {
    GridShape shape;
    int dim = 0;
    MatrixX<Scalar> values;
    bool normalized = false;
};

using FeatureMap = FeatureMapT<double>;

/// Learnable 1x1 linear patch projector: row(i) of the output is
/// weight^T * pixel(i) + bias. Gradients accumulate until zero_grad().
template <class Scalar>
struct LinearProjectorT {
    MatrixX<Scalar> weight;       // in_features x dim
    VectorX<Scalar> bias;         // dim
    MatrixX<Scalar> weight_grad;  // same shape as weight
    VectorX<Scalar> bias_grad;    // same shape as bias

    LinearProjectorT() = default;
    LinearProjectorT(int in_features, int dim)
        : weight(MatrixX<Scalar>::Zero(in_features, dim)),
          bias(VectorX<Scalar>::Zero(dim)),
          weight_grad(MatrixX<Scalar>::Zero(in_features, dim)),
          bias_grad(VectorX<Scalar>::Zero(dim)) {}

    int in_features() const { return static_cast<int>(weight.rows()); }
    int dim() const { return static_cast<int>(weight.cols()); }

    void zero_grad() {
        weight_grad.setZero();
        bias_grad.setZero();
    }

    static LinearProjectorT random(int in_features, int dim, Rng& rng, Scalar scale) {
        LinearProjectorT p(in_features, dim);
        for (int r = 0; r < in_features; ++r)
            for (int c = 0; c < dim; ++c) p.weight(r, c) = static_cast<Scalar>(rng.uniform(-scale, scale));
        return p;
    }
};

using LinearProjector = LinearProjectorT<double>;

template <class Scalar>
FeatureMapT<Scalar> extract_features(const ImageGridT<Scalar>& img, const LinearProjectorT<Scalar>& proj) {
    if (img.channels != proj.in_features())
        throw std::invalid_argument("extract_features: projector in_features != image channels");
    FeatureMapT<Scalar> f;
    f.shape = img.shape;
    f.dim = proj.dim();
    f.values = img.values * proj.weight;
    f.values.rowwise() += proj.bias.transpose();
    f.normalized = false;
    return f;
}

/// Divide every nonzero row by its Euclidean norm. Zero rows pass through.
template <class Scalar>
FeatureMapT<Scalar> l2_normalize(const FeatureMapT<Scalar>& f) {
    FeatureMapT<Scalar> out = f;
    for (Eigen::Index i = 0; i < out.values.rows(); ++i) {
        const Scalar n = out.values.row(i).norm();
        if (n > Scalar(0)) out.values.row(i) /= n;
    }
    out.normalized = true;
    return out;
}

/// Backward of l2_normalize: pulls grad_out (w.r.t. normalized rows) back to
/// the unnormalized rows via the exact Jacobian (I - y y^T)/|x|. Zero rows
/// propagate zero gradient.
template <class Scalar>
MatrixX<Scalar> l2_normalize_backward(const FeatureMapT<Scalar>& unnormalized, const std::type_identity_t<MatrixX<Scalar>>& grad_out) {
    if (grad_out.rows() != unnormalized.values.rows() || grad_out.cols() != unnormalized.values.cols())
        throw std::invalid_argument("l2_normalize_backward: grad shape mismatch");
    MatrixX<Scalar> grad_in = MatrixX<Scalar>::Zero(grad_out.rows(), grad_out.cols());
    for (Eigen::Index i = 0; i < grad_out.rows(); ++i) {
        const Scalar n = unnormalized.values.row(i).norm();
        if (n == Scalar(0)) continue;
        const auto y = unnormalized.values.row(i) / n;
        const Scalar proj = y.dot(grad_out.row(i));
        grad_in.row(i) = (grad_out.row(i) - proj * y) / n;
    }
    return grad_in;
}

/// Accumulate projector gradients for d(loss)/d(features) = grad_out.
/// Images are leaves, so nothing propagates further upstream.
template <class Scalar>
void extract_features_backward(const ImageGridT<Scalar>& img, LinearProjectorT<Scalar>& proj,
                               const std::type_identity_t<MatrixX<Scalar>>& grad_out) {
    if (img.channels != proj.in_features())
        throw std::invalid_argument("extract_features_backward: projector in_features != image channels");
    if (grad_out.rows() != img.shape.size() || grad_out.cols() != proj.dim())
        throw std::invalid_argument("extract_features_backward: grad shape mismatch");
    proj.weight_grad.noalias() += img.values.transpose() * grad_out;
    proj.bias_grad.noalias() += grad_out.colwise().sum().transpose();
}

}  // namespace semcorr
