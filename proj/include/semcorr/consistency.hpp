#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "semcorr/cost_volume.hpp"

namespace semcorr {

/// Per-cell integer displacements from the `shape` grid into the `to_shape`
/// grid. Flows produced by wta_flow land in-grid by construction.
struct FlowField {
    GridShape shape;
    GridShape to_shape;
    std::vector<Displacement> vectors;
    CostKind source_kind = CostKind::raw;

    FlowField() = default;
    FlowField(GridShape from, GridShape to, CostKind kind = CostKind::raw)
        : shape(from), to_shape(to), vectors(static_cast<std::size_t>(from.size())), source_kind(kind) {}

    const Displacement& operator()(int i) const { return vectors[static_cast<std::size_t>(i)]; }
    Displacement& operator()(int i) { return vectors[static_cast<std::size_t>(i)]; }
};

/// Binary per-cell reliability indicator; `count` tracks the popcount.
struct ConfidenceMask {
    GridShape shape;
    std::vector<std::uint8_t> bits;
    int count = 0;

    ConfidenceMask() = default;
    explicit ConfidenceMask(GridShape s) : shape(s), bits(static_cast<std::size_t>(s.size()), 0) {}

    bool operator()(int i) const { return bits[static_cast<std::size_t>(i)] != 0; }
    void set(int i, bool v) {
        auto& b = bits[static_cast<std::size_t>(i)];
        count += static_cast<int>(v) - static_cast<int>(b);
        b = v ? 1 : 0;
    }
};

/// Tolerance of the forward-backward check: the squared residual must stay
/// below alpha1 * (|fwd|^2 + |bwd|^2) + alpha2.
struct ConsistencyParams {
    double alpha1 = 0.1;
    double alpha2 = 0.05;
};

/// Winner-take-all pseudo matching map: vectors[i] points from cell i to the
/// argmax of row i. Ties break to the lowest flat index, keeping runs
/// bit-reproducible.
template <class Scalar>
FlowField wta_flow(const CostVolumeT<Scalar>& c) {
    FlowField f(c.shape_s, c.shape_t, c.kind);
    for (int i = 0; i < c.shape_s.size(); ++i) {
        int best = 0;
        Scalar best_val = c.values(i, 0);
        for (int j = 1; j < c.shape_t.size(); ++j) {
            if (c.values(i, j) > best_val) {
                best_val = c.values(i, j);
                best = j;
            }
        }
        const Coord from = flat_to_coord(i, c.shape_s);
        const Coord to = flat_to_coord(best, c.shape_t);
        f(i) = {to.row - from.row, to.col - from.col};
    }
    return f;
}

/// Eq-style forward-backward check with strict '<'. Cells whose forward match
/// leaves the target grid cannot be verified and get bit 0.
inline ConfidenceMask consistency_mask(const FlowField& f_fwd, const FlowField& f_bwd,
                                       const ConsistencyParams& p) {
    if (f_fwd.to_shape != f_bwd.shape || f_bwd.to_shape != f_fwd.shape)
        throw std::invalid_argument("consistency_mask: grid mismatch");
    ConfidenceMask m(f_fwd.shape);
    for (int i = 0; i < f_fwd.shape.size(); ++i) {
        const int t = apply_displacement(i, f_fwd(i), f_fwd.shape, f_bwd.shape);
        if (t == kOutOfGrid) continue;
        const Displacement residual = f_fwd(i) + f_bwd(t);
        const double lhs = residual.squared_norm();
        const double rhs = p.alpha1 * (f_fwd(i).squared_norm() + f_bwd(t).squared_norm()) + p.alpha2;
        if (lhs < rhs) m.set(i, true);
    }
    return m;
}

struct FlowsAndMask {
    FlowField fwd;
    FlowField bwd;
    ConfidenceMask mask;
};

/// Argmax applied twice (rows of C, rows of C^T) plus the consistency check.
template <class Scalar>
FlowsAndMask mask_and_flows(const CostVolumeT<Scalar>& c, const ConsistencyParams& p) {
    FlowsAndMask out;
    out.fwd = wta_flow(c);
    out.bwd = wta_flow(transpose(c));
    out.mask = consistency_mask(out.fwd, out.bwd, p);
    return out;
}

/// Plain PGM, maxval 1: reliable cells print as 1.
inline std::string mask_to_pgm(const ConfidenceMask& m) {
    std::string out = "P2\n" + std::to_string(m.shape.cols) + " " + std::to_string(m.shape.rows) + "\n1\n";
    for (int r = 0; r < m.shape.rows; ++r) {
        for (int c = 0; c < m.shape.cols; ++c) {
            if (c) out += " ";
            out += m(r * m.shape.cols + c) ? "1" : "0";
        }
        out += "\n";
    }
    return out;
}

inline void write_mask_pgm(const std::filesystem::path& path, const ConfidenceMask& m) {
    write_file_atomic(path, mask_to_pgm(m));
}

inline std::string flow_to_csv(const FlowField& f) {
    std::string out = "i,dy,dx\n";
    for (int i = 0; i < f.shape.size(); ++i)
        out += std::to_string(i) + "," + std::to_string(f(i).dy) + "," + std::to_string(f(i).dx) + "\n";
    return out;
}

inline void write_flow_csv(const std::filesystem::path& path, const FlowField& f) {
    write_file_atomic(path, flow_to_csv(f));
}

}  // namespace semcorr
