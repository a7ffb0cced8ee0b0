#pragma once

#include <cmath>
#include <stdexcept>

namespace semcorr {

/// Dimensions of a dense cell grid. Flat indices run over [0, rows*cols) in
/// row-major order.
struct GridShape {
    int rows = 0;
    int cols = 0;

    int size() const { return rows * cols; }
    bool operator==(const GridShape&) const = default;
};

struct Coord {
    int row = 0;
    int col = 0;

    bool operator==(const Coord&) const = default;
};

/// Integer displacement in grid cells, (dy, dx).
struct Displacement {
    int dy = 0;
    int dx = 0;

    bool operator==(const Displacement&) const = default;
    Displacement operator-() const { return {-dy, -dx}; }
    Displacement operator+(const Displacement& o) const { return {dy + o.dy, dx + o.dx}; }
    Displacement operator-(const Displacement& o) const { return {dy - o.dy, dx - o.dx}; }

    double squared_norm() const {
        return static_cast<double>(dy) * dy + static_cast<double>(dx) * dx;
    }
    double norm() const { return std::sqrt(squared_norm()); }
};

/// Sentinel flat index for displacements that leave the grid.
inline constexpr int kOutOfGrid = -1;

inline bool in_grid(Coord c, GridShape s) {
    return c.row >= 0 && c.row < s.rows && c.col >= 0 && c.col < s.cols;
}

inline Coord flat_to_coord(int i, GridShape s) {
    if (i < 0 || i >= s.size()) throw std::out_of_range("index out of grid");
    return {i / s.cols, i % s.cols};
}

inline int coord_to_flat(Coord c, GridShape s) {
    if (!in_grid(c, s)) throw std::out_of_range("coordinate out of grid");
    return c.row * s.cols + c.col;
}

/// Flat index of cell i moved by d, or kOutOfGrid if the move leaves the grid.
inline int apply_displacement(int i, Displacement d, GridShape s) {
    Coord c = flat_to_coord(i, s);
    Coord moved{c.row + d.dy, c.col + d.dx};
    if (!in_grid(moved, s)) return kOutOfGrid;
    return coord_to_flat(moved, s);
}

/// As apply_displacement but lands on a possibly different grid (e.g. a flow
/// from the source grid into the target grid).
inline int apply_displacement(int i, Displacement d, GridShape from, GridShape to) {
    Coord c = flat_to_coord(i, from);
    Coord moved{c.row + d.dy, c.col + d.dx};
    if (!in_grid(moved, to)) return kOutOfGrid;
    return coord_to_flat(moved, to);
}

}  // namespace semcorr
