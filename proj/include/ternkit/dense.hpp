#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ternkit {

/// Row-major float32 matrix. Holds latent weights, activations and every
/// other real-valued tensor in the library.
class DenseMatrix {
public:
    DenseMatrix() = default;

    DenseMatrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}

    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<float> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            throw std::invalid_argument("DenseMatrix: data length " + std::to_string(data_.size()) +
                                        " != rows*cols " + std::to_string(rows_ * cols_));
        for (float v : data_)
            if (!std::isfinite(v))
                throw std::invalid_argument("DenseMatrix: non-finite entry");
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    float& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    float at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    std::span<const float> flat() const { return {data_.data(), data_.size()}; }

    bool operator==(const DenseMatrix& o) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

}  // namespace ternkit
