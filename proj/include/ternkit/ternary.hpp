#pragma once

#include <cmath>
#include <cstdint>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ternkit/errors.hpp"

namespace ternkit {

/// One ternary weight: -1, 0 or +1.
using TernaryCode = std::int8_t;

/// Staircase quantizer. Thresholds follow the half-open bins
/// [-inf,-0.5) -> -1, [-0.5,0.5) -> 0, [0.5,inf) -> +1.
inline TernaryCode tern(float x) {
    if (x < -0.5f) return -1;
    if (x >= 0.5f) return 1;
    return 0;
}

namespace detail {

// 2-bit lane encoding: 0 -> 00, +1 -> 01, -1 -> 11. Pattern 10 never
// appears in valid data and doubles as a corruption detector.
inline std::uint8_t encode_lane(TernaryCode c) {
    switch (c) {
        case 0: return 0b00;
        case 1: return 0b01;
        case -1: return 0b11;
        default:
            throw std::invalid_argument("encode_lane: code must be -1, 0 or +1");
    }
}

inline TernaryCode decode_lane(std::uint8_t bits) {
    switch (bits & 3u) {
        case 0b00: return 0;
        case 0b01: return 1;
        case 0b11: return -1;
        default:
            throw corrupt_data_error("invalid ternary bit pattern 0b10");
    }
}

}  // namespace detail

/// Row-major ternary weight matrix, 4 codes per byte, one positive float32
/// scale per output row. Immutable after construction.
///
/// Code (r,c) lives in bits [2*(c%4), 2*(c%4)+1] of byte r*row_stride + c/4.
/// Padding lanes past `cols` in the last byte of a row are always 00.
class PackedTernaryMatrix {
public:
    PackedTernaryMatrix() = default;

    static std::size_t stride_for(std::size_t cols) { return (cols + 3) / 4; }

    /// Assembles a matrix from raw storage, validating every invariant.
    /// Used by pack_matrix and by deserialization.
    PackedTernaryMatrix(std::size_t rows, std::size_t cols,
                        std::vector<std::uint8_t> data, std::vector<float> scales)
        : rows_(rows), cols_(cols), row_stride_(stride_for(cols)),
          data_(std::move(data)), scales_(std::move(scales)) {
        if (data_.size() != rows_ * row_stride_)
            throw std::invalid_argument("PackedTernaryMatrix: data length " +
                                        std::to_string(data_.size()) + " != rows*row_stride " +
                                        std::to_string(rows_ * row_stride_));
        if (scales_.size() != rows_)
            throw std::invalid_argument("PackedTernaryMatrix: need one scale per row");
        for (float s : scales_)
            if (!(s > 0.0f) || !std::isfinite(s))
                throw std::invalid_argument("PackedTernaryMatrix: scales must be finite and positive");
        validate_codes();
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t row_stride() const { return row_stride_; }

    std::span<const std::uint8_t> row_bytes(std::size_t r) const {
        return {data_.data() + r * row_stride_, row_stride_};
    }
    std::span<const std::uint8_t> bytes() const { return {data_.data(), data_.size()}; }
    std::span<const float> scales() const { return {scales_.data(), scales_.size()}; }
    float scale(std::size_t r) const { return scales_[r]; }

    TernaryCode code(std::size_t r, std::size_t c) const {
        const std::uint8_t byte = data_[r * row_stride_ + c / 4];
        return detail::decode_lane(byte >> (2 * (c % 4)));
    }

    /// Total bytes a kernel must keep resident: codes plus scales.
    std::size_t storage_bytes() const { return data_.size() + scales_.size() * sizeof(float); }

private:
    void validate_codes() const {
        for (std::size_t r = 0; r < rows_; ++r) {
            const std::uint8_t* row = data_.data() + r * row_stride_;
            for (std::size_t k = 0; k < row_stride_; ++k) {
                const std::uint8_t b = row[k];
                for (std::size_t lane = 0; lane < 4; ++lane) {
                    const std::uint8_t v = (b >> (2 * lane)) & 3u;
                    const std::size_t c = 4 * k + lane;
                    if (c >= cols_) {
                        if (v != 0)
                            throw corrupt_data_error("nonzero padding lane in packed row " +
                                                     std::to_string(r));
                    } else if (v == 0b10) {
                        throw corrupt_data_error("invalid ternary bit pattern 0b10 at (" +
                                                 std::to_string(r) + "," + std::to_string(c) + ")");
                    }
                }
            }
        }
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::size_t row_stride_ = 0;
    std::vector<std::uint8_t> data_;
    std::vector<float> scales_;
};

/// Packs a rows x cols grid of ternary codes (row-major) with per-row scales.
inline PackedTernaryMatrix pack_matrix(std::size_t rows, std::size_t cols,
                                       std::span<const TernaryCode> codes,
                                       std::span<const float> scales) {
    if (codes.size() != rows * cols)
        throw std::invalid_argument("pack_matrix: codes length != rows*cols");
    if (scales.size() != rows)
        throw std::invalid_argument("pack_matrix: need one scale per row");
    const std::size_t stride = PackedTernaryMatrix::stride_for(cols);
    std::vector<std::uint8_t> data(rows * stride, 0);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const std::uint8_t lane = detail::encode_lane(codes[r * cols + c]);
            data[r * stride + c / 4] |= static_cast<std::uint8_t>(lane << (2 * (c % 4)));
        }
    }
    return PackedTernaryMatrix(rows, cols, std::move(data),
                               std::vector<float>(scales.begin(), scales.end()));
}

struct UnpackedTernary {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<TernaryCode> codes;  // row-major
    std::vector<float> scales;
};

/// Exact inverse of pack_matrix on the unpadded region.
inline UnpackedTernary unpack_matrix(const PackedTernaryMatrix& p) {
    UnpackedTernary out;
    out.rows = p.rows();
    out.cols = p.cols();
    out.codes.resize(p.rows() * p.cols());
    out.scales.assign(p.scales().begin(), p.scales().end());
    for (std::size_t r = 0; r < p.rows(); ++r) {
        const auto row = p.row_bytes(r);
        for (std::size_t c = 0; c < p.cols(); ++c)
            out.codes[r * p.cols() + c] = detail::decode_lane(row[c / 4] >> (2 * (c % 4)));
    }
    return out;
}

/// Fraction of unpadded codes equal to 0.
inline double sparsity(const PackedTernaryMatrix& p) {
    if (p.rows() == 0 || p.cols() == 0) return 0.0;
    std::size_t zeros = 0;
    for (std::size_t r = 0; r < p.rows(); ++r)
        for (std::size_t c = 0; c < p.cols(); ++c)
            if (p.code(r, c) == 0) ++zeros;
    return static_cast<double>(zeros) / static_cast<double>(p.rows() * p.cols());
}

}  // namespace ternkit
