#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <filesystem>
#include <stdexcept>
#include <type_traits>
#include <string>

#include "semcorr/cost_volume.hpp"
#include "semcorr/io.hpp"
#include "semcorr/rng.hpp"

namespace semcorr {

/// Single 4D convolution kernel of odd size k: k^4 weights in row-major
/// (p, q, r, s) order over (source dy, source dx, target dy, target dx),
/// plus one scalar bias.
template <class Scalar>
struct Conv4dKernelT {
    int size = 0;
    VectorX<Scalar> weights;
    Scalar bias = Scalar(0);
    VectorX<Scalar> weight_grad;
    Scalar bias_grad = Scalar(0);

    Conv4dKernelT() = default;
    explicit Conv4dKernelT(int k) : size(k) {
        if (k < 1 || k % 2 == 0) throw std::invalid_argument("conv4d kernel size must be odd and positive");
        const int n = k * k * k * k;
        weights = VectorX<Scalar>::Zero(n);
        weight_grad = VectorX<Scalar>::Zero(n);
    }

    int index(int p, int q, int r, int s) const { return ((p * size + q) * size + r) * size + s; }

    void zero_grad() {
        weight_grad.setZero();
        bias_grad = Scalar(0);
    }

    /// Identity-through-ReLU kernel: center weight 1, everything else 0.
    static Conv4dKernelT delta(int k) {
        Conv4dKernelT kern(k);
        const int o = k / 2;
        kern.weights[kern.index(o, o, o, o)] = Scalar(1);
        return kern;
    }

    /// Delta kernel plus uniform noise in [-0.01, 0.01]; starts near identity
    /// so early aggregated flows are sane while the filter stays trainable.
    static Conv4dKernelT near_identity(int k, Rng& rng) {
        Conv4dKernelT kern = delta(k);
        for (Eigen::Index i = 0; i < kern.weights.size(); ++i)
            kern.weights[i] += static_cast<Scalar>(rng.uniform(-0.01, 0.01));
        return kern;
    }
};

using Conv4dKernel = Conv4dKernelT<double>;

namespace detail {

template <class Scalar>
using PlaneMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class Scalar>
using ConstPlaneMap = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

/// Row i of a cost matrix viewed as its (h_t x w_t) target plane.
template <class Scalar>
PlaneMap<Scalar> plane(MatrixX<Scalar>& m, int i, GridShape t) {
    return PlaneMap<Scalar>(m.data() + static_cast<std::ptrdiff_t>(i) * t.size(), t.rows, t.cols);
}

template <class Scalar>
ConstPlaneMap<Scalar> plane(const MatrixX<Scalar>& m, int i, GridShape t) {
    return ConstPlaneMap<Scalar>(m.data() + static_cast<std::ptrdiff_t>(i) * t.size(), t.rows, t.cols);
}

struct BlockClip {
    int c0, e0, ch, ew;  // block origin and extent on the output plane
};

/// Overlap of the output plane with the input plane shifted by (dr, ds).
inline BlockClip clip_shift(GridShape t, int dr, int ds) {
    BlockClip b;
    b.c0 = std::max(0, -dr);
    b.e0 = std::max(0, -ds);
    b.ch = std::min(t.rows, t.rows - dr) - b.c0;
    b.ew = std::min(t.cols, t.cols - ds) - b.e0;
    return b;
}

}  // namespace detail

/// Linear stage of the aggregator: Conv4d(C) + bias with zero padding of
/// (k-1)/2 in all four dims, viewing the volume as (h_s, w_s, h_t, w_t).
template <class Scalar>
CostVolumeT<Scalar> conv4d(const CostVolumeT<Scalar>& c, const Conv4dKernelT<Scalar>& kernel) {
    const int k = kernel.size;
    const int o = k / 2;
    const GridShape ss = c.shape_s, ts = c.shape_t;
    CostVolumeT<Scalar> a;
    a.shape_s = ss;
    a.shape_t = ts;
    a.kind = CostKind::aggregated;
    a.values = MatrixX<Scalar>::Constant(c.values.rows(), c.values.cols(), kernel.bias);

    for (int i = 0; i < ss.size(); ++i) {
        auto out_plane = detail::plane(a.values, i, ts);
        const int ar = i / ss.cols, ac = i % ss.cols;
        for (int p = 0; p < k; ++p) {
            const int ar2 = ar + p - o;
            if (ar2 < 0 || ar2 >= ss.rows) continue;
            for (int q = 0; q < k; ++q) {
                const int ac2 = ac + q - o;
                if (ac2 < 0 || ac2 >= ss.cols) continue;
                const auto in_plane = detail::plane(c.values, ar2 * ss.cols + ac2, ts);
                for (int r = 0; r < k; ++r) {
                    for (int s = 0; s < k; ++s) {
                        const Scalar w = kernel.weights[kernel.index(p, q, r, s)];
                        const auto b = detail::clip_shift(ts, r - o, s - o);
                        if (b.ch <= 0 || b.ew <= 0) continue;
                        out_plane.block(b.c0, b.e0, b.ch, b.ew) +=
                            w * in_plane.block(b.c0 + r - o, b.e0 + s - o, b.ch, b.ew);
                    }
                }
            }
        }
    }
    return a;
}

/// A = ReLU(Conv4d(C) + bias); output shape equals input shape.
template <class Scalar>
CostVolumeT<Scalar> aggregate(const CostVolumeT<Scalar>& c, const Conv4dKernelT<Scalar>& kernel) {
    CostVolumeT<Scalar> a = conv4d(c, kernel);
    a.values = a.values.cwiseMax(Scalar(0));
    return a;
}

/// Backward of aggregate given the forward output (its positivity pattern is
/// exactly the ReLU gate). Returns grad_C and accumulates kernel gradients.
template <class Scalar>
MatrixX<Scalar> aggregate_backward(const CostVolumeT<Scalar>& c, Conv4dKernelT<Scalar>& kernel,
                                   const std::type_identity_t<MatrixX<Scalar>>& grad_a, const CostVolumeT<Scalar>& forward_out) {
    if (grad_a.rows() != c.values.rows() || grad_a.cols() != c.values.cols())
        throw std::invalid_argument("aggregate_backward: grad shape mismatch");
    if (forward_out.values.rows() != c.values.rows() || forward_out.values.cols() != c.values.cols())
        throw std::invalid_argument("aggregate_backward: forward output shape mismatch");

    const MatrixX<Scalar> gated =
        ((forward_out.values.array() > Scalar(0)).template cast<Scalar>() * grad_a.array()).matrix();

    const int k = kernel.size;
    const int o = k / 2;
    const GridShape ss = c.shape_s, ts = c.shape_t;
    MatrixX<Scalar> grad_c = MatrixX<Scalar>::Zero(c.values.rows(), c.values.cols());

    kernel.bias_grad += gated.sum();
    for (int i = 0; i < ss.size(); ++i) {
        const auto g_plane = detail::plane(gated, i, ts);
        const int ar = i / ss.cols, ac = i % ss.cols;
        for (int p = 0; p < k; ++p) {
            const int ar2 = ar + p - o;
            if (ar2 < 0 || ar2 >= ss.rows) continue;
            for (int q = 0; q < k; ++q) {
                const int ac2 = ac + q - o;
                if (ac2 < 0 || ac2 >= ss.cols) continue;
                const int i2 = ar2 * ss.cols + ac2;
                const auto in_plane = detail::plane(c.values, i2, ts);
                auto gc_plane = detail::plane(grad_c, i2, ts);
                for (int r = 0; r < k; ++r) {
                    for (int s = 0; s < k; ++s) {
                        const auto b = detail::clip_shift(ts, r - o, s - o);
                        if (b.ch <= 0 || b.ew <= 0) continue;
                        const auto g_blk = g_plane.block(b.c0, b.e0, b.ch, b.ew);
                        const int idx = kernel.index(p, q, r, s);
                        kernel.weight_grad[idx] +=
                            (in_plane.block(b.c0 + r - o, b.e0 + s - o, b.ch, b.ew).array() * g_blk.array())
                                .sum();
                        gc_plane.block(b.c0 + r - o, b.e0 + s - o, b.ch, b.ew) +=
                            kernel.weights[idx] * g_blk;
                    }
                }
            }
        }
    }
    return grad_c;
}

/// Convenience overload that recomputes the forward pass for the ReLU gate.
template <class Scalar>
MatrixX<Scalar> aggregate_backward(const CostVolumeT<Scalar>& c, Conv4dKernelT<Scalar>& kernel,
                                   const std::type_identity_t<MatrixX<Scalar>>& grad_a) {
    return aggregate_backward(c, kernel, grad_a, aggregate(c, kernel));
}

/// Checkpoint layout: magic "C4D1", k as u32 LE, then k^4+1 IEEE-754 LE
/// doubles (weights in (p,q,r,s) row-major order, then bias).
inline std::string kernel_to_bytes(const Conv4dKernel& kernel) {
    std::string out = "C4D1";
    append_u32_le(out, static_cast<std::uint32_t>(kernel.size));
    for (Eigen::Index i = 0; i < kernel.weights.size(); ++i) append_f64_le(out, kernel.weights[i]);
    append_f64_le(out, kernel.bias);
    return out;
}

inline Conv4dKernel kernel_from_bytes(const std::string& bytes) {
    if (bytes.size() < 4 || bytes.substr(0, 4) != "C4D1") throw std::runtime_error("bad kernel checkpoint magic");
    std::size_t pos = 4;
    const int k = static_cast<int>(read_u32_le(bytes, pos));
    Conv4dKernel kernel(k);
    for (Eigen::Index i = 0; i < kernel.weights.size(); ++i) kernel.weights[i] = read_f64_le(bytes, pos);
    kernel.bias = read_f64_le(bytes, pos);
    return kernel;
}

inline void save_kernel(const std::filesystem::path& path, const Conv4dKernel& kernel) {
    write_file_atomic(path, kernel_to_bytes(kernel));
}

inline Conv4dKernel load_kernel(const std::filesystem::path& path) { return kernel_from_bytes(read_file(path)); }

}  // namespace semcorr
