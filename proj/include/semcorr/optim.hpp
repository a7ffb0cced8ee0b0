#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "semcorr/image.hpp"

namespace semcorr {

struct AdamWParams {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
};

/// First/second moment accumulators for one parameter tensor. Lazily sized on
/// the first step.
template <class Scalar>
struct AdamWStateT {
    VectorX<Scalar> m;
    VectorX<Scalar> v;
    long step = 0;
};

using AdamWState = AdamWStateT<double>;

/// Decoupled weight decay (param *= 1 - lr*wd) followed by the bias-corrected
/// Adam moment update.
template <class Scalar>
void adamw_step(Eigen::Ref<VectorX<Scalar>> param, const Eigen::Ref<const VectorX<Scalar>>& grad,
                AdamWStateT<Scalar>& state, const AdamWParams& hp) {
    if (grad.size() != param.size()) throw std::invalid_argument("adamw_step: shape mismatch");
    if (!grad.allFinite()) throw std::runtime_error("diverged: non-finite gradient in adamw_step");
    if (state.step == 0) {
        state.m = VectorX<Scalar>::Zero(param.size());
        state.v = VectorX<Scalar>::Zero(param.size());
    } else if (state.m.size() != param.size()) {
        throw std::invalid_argument("adamw_step: state size mismatch");
    }
    state.step += 1;
    const Scalar lr = static_cast<Scalar>(hp.lr);
    const Scalar b1 = static_cast<Scalar>(hp.beta1);
    const Scalar b2 = static_cast<Scalar>(hp.beta2);

    param *= (Scalar(1) - lr * static_cast<Scalar>(hp.weight_decay));
    state.m = b1 * state.m + (Scalar(1) - b1) * grad;
    state.v = b2 * state.v + (Scalar(1) - b2) * grad.cwiseProduct(grad);
    const Scalar bc1 = Scalar(1) - std::pow(b1, static_cast<Scalar>(state.step));
    const Scalar bc2 = Scalar(1) - std::pow(b2, static_cast<Scalar>(state.step));
    param.array() -=
        lr * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + static_cast<Scalar>(hp.eps));
}

/// Flat view of a row-major matrix for optimizer updates.
template <class Scalar>
Eigen::Map<VectorX<Scalar>> as_flat(MatrixX<Scalar>& m) {
    return Eigen::Map<VectorX<Scalar>>(m.data(), m.size());
}

template <class Scalar>
Eigen::Map<const VectorX<Scalar>> as_flat(const MatrixX<Scalar>& m) {
    return Eigen::Map<const VectorX<Scalar>>(m.data(), m.size());
}

}  // namespace semcorr
