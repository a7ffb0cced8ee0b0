#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <sstream>
#include <stdexcept>
#include <string>

#include "semcorr/geometry.hpp"
#include "semcorr/io.hpp"

namespace semcorr {

template <class Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Dense multi-channel grid: one row of `values` per cell (row-major cell
/// order), one column per channel.
template <class Scalar>
struct ImageGridT {
    GridShape shape;
    int channels = 0;
    MatrixX<Scalar> values;

    ImageGridT() = default;
    ImageGridT(GridShape s, int ch) : shape(s), channels(ch), values(MatrixX<Scalar>::Zero(s.size(), ch)) {
        if (s.rows < 1 || s.cols < 1 || ch < 1) throw std::invalid_argument("image dims must be positive");
    }
};

using ImageGrid = ImageGridT<double>;

/// CSV image format: header line "h,w,channels", a dims line, then one line
/// per cell (row-major) with `channels` comma-separated values.
template <class Scalar>
std::string image_to_csv(const ImageGridT<Scalar>& img) {
    std::string out = "h,w,channels\n";
    out += std::to_string(img.shape.rows) + "," + std::to_string(img.shape.cols) + "," +
           std::to_string(img.channels) + "\n";
    for (int i = 0; i < img.shape.size(); ++i) {
        for (int c = 0; c < img.channels; ++c) {
            if (c) out += ",";
            out += format_double(static_cast<double>(img.values(i, c)));
        }
        out += "\n";
    }
    return out;
}

inline ImageGrid image_from_csv(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line) || split_csv_line(line) != std::vector<std::string>{"h", "w", "channels"})
        throw std::runtime_error("image csv: expected 'h,w,channels' header");
    if (!std::getline(in, line)) throw std::runtime_error("image csv: missing dims line");
    const auto dims = split_csv_line(line);
    if (dims.size() != 3) throw std::runtime_error("image csv: dims line needs 3 fields");
    ImageGrid img({std::stoi(dims[0]), std::stoi(dims[1])}, std::stoi(dims[2]));
    for (int i = 0; i < img.shape.size(); ++i) {
        if (!std::getline(in, line)) throw std::runtime_error("image csv: truncated values");
        const auto fields = split_csv_line(line);
        if (static_cast<int>(fields.size()) != img.channels)
            throw std::runtime_error("image csv: wrong field count");
        for (int c = 0; c < img.channels; ++c) img.values(i, c) = std::stod(fields[c]);
    }
    return img;
}

inline void write_image_csv(const std::filesystem::path& path, const ImageGrid& img) {
    write_file_atomic(path, image_to_csv(img));
}

inline ImageGrid read_image_csv(const std::filesystem::path& path) { return image_from_csv(read_file(path)); }

}  // namespace semcorr
