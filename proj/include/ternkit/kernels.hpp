#pragma once

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstdint>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "ternkit/dense.hpp"
#include "ternkit/ternary.hpp"

namespace ternkit {

/// Execution strategies for the ternary product. All variants compute the
/// same mathematical function.
enum class KernelVariant {
    reference_dense,          // dense multiply on dequantized weights
    unpack_then_multiply,     // dequantize into scratch, then dense multiply
    direct_ternary,           // add/sub on packed codes, scale the accumulator
    direct_ternary_parallel,  // direct kernel with rows split across workers
};

inline const char* to_string(KernelVariant v) {
    switch (v) {
        case KernelVariant::reference_dense: return "reference_dense";
        case KernelVariant::unpack_then_multiply: return "unpack_then_multiply";
        case KernelVariant::direct_ternary: return "direct_ternary";
        case KernelVariant::direct_ternary_parallel: return "direct_ternary_parallel";
    }
    return "?";
}

inline KernelVariant kernel_variant_from_string(const std::string& s) {
    if (s == "reference_dense") return KernelVariant::reference_dense;
    if (s == "unpack_then_multiply") return KernelVariant::unpack_then_multiply;
    if (s == "direct_ternary") return KernelVariant::direct_ternary;
    if (s == "direct_ternary_parallel") return KernelVariant::direct_ternary_parallel;
    throw std::invalid_argument("unknown kernel variant: " + s);
}

/// Scratch allocator with a high-water mark. Buffers are pooled and reused
/// across calls; the mark tracks logical live bytes, not pool capacity.
class Workspace {
public:
    class Buffer {
    public:
        Buffer() = default;
        Buffer(Workspace* ws, std::vector<float> v) : ws_(ws), v_(std::move(v)) {}
        Buffer(Buffer&& o) noexcept : ws_(o.ws_), v_(std::move(o.v_)) { o.ws_ = nullptr; }
        Buffer& operator=(Buffer&& o) noexcept {
            release();
            ws_ = o.ws_;
            v_ = std::move(o.v_);
            o.ws_ = nullptr;
            return *this;
        }
        Buffer(const Buffer&) = delete;
        Buffer& operator=(const Buffer&) = delete;
        ~Buffer() { release(); }

        float* data() { return v_.data(); }
        const float* data() const { return v_.data(); }
        std::size_t size() const { return v_.size(); }
        std::span<float> span() { return {v_.data(), v_.size()}; }

    private:
        void release() {
            if (ws_) ws_->give_back(std::move(v_));
            ws_ = nullptr;
        }
        Workspace* ws_ = nullptr;
        std::vector<float> v_;
    };

    Buffer acquire(std::size_t floats) {
        std::vector<float> v;
        for (auto it = pool_.begin(); it != pool_.end(); ++it) {
            if (it->capacity() >= floats) {
                v = std::move(*it);
                pool_.erase(it);
                break;
            }
        }
        v.resize(floats);
        live_bytes_ += floats * sizeof(float);
        peak_bytes_ = std::max(peak_bytes_, live_bytes_);
        return Buffer(this, std::move(v));
    }

    std::size_t peak_bytes() const { return peak_bytes_; }
    std::size_t live_bytes() const { return live_bytes_; }
    void reset_peak() { peak_bytes_ = live_bytes_; }

private:
    friend class Buffer;
    void give_back(std::vector<float> v) {
        live_bytes_ -= v.size() * sizeof(float);
        pool_.push_back(std::move(v));
    }

    std::vector<std::vector<float>> pool_;
    std::size_t live_bytes_ = 0;
    std::size_t peak_bytes_ = 0;
};

namespace detail {

// Single dense row dot product, ascending index, float32 accumulator.
// Shared by the reference and unpack paths so they agree bit for bit.
inline float dense_dot(const float* w, const float* x, std::size_t n) {
    float acc = 0.0f;
    for (std::size_t c = 0; c < n; ++c) acc += w[c] * x[c];
    return acc;
}

// Packed row accumulator: adds x where the code is +1, subtracts where -1.
// Branch-free lane handling; zero bytes (75% of lanes zero, plus padding)
// take the early-out. Lanes with the invalid pattern 10 contribute nothing
// and raise `bad`.
inline float ternary_dot(const std::uint8_t* row, const float* x, std::size_t cols,
                         std::uint32_t& bad) {
    float acc = 0.0f;
    const std::size_t full_bytes = cols / 4;
    for (std::size_t k = 0; k < full_bytes; ++k) {
        const std::uint8_t b = row[k];
        if (b == 0) continue;
        const float* xx = x + 4 * k;
        for (int lane = 0; lane < 4; ++lane) {
            const std::uint32_t v = (static_cast<std::uint32_t>(b) >> (2 * lane)) & 3u;
            const std::uint32_t keep = 0u - (v & 1u);
            const std::uint32_t sign = (v >> 1) << 31;
            bad |= (v >> 1) & ~v & 1u;
            const std::uint32_t bits = (std::bit_cast<std::uint32_t>(xx[lane]) ^ sign) & keep;
            acc += std::bit_cast<float>(bits);
        }
    }
    if (full_bytes * 4 < cols) {
        const std::uint8_t b = row[full_bytes];
        for (std::size_t c = full_bytes * 4; c < cols; ++c) {
            const std::uint32_t v = (static_cast<std::uint32_t>(b) >> (2 * (c % 4))) & 3u;
            const std::uint32_t keep = 0u - (v & 1u);
            const std::uint32_t sign = (v >> 1) << 31;
            bad |= (v >> 1) & ~v & 1u;
            const std::uint32_t bits = (std::bit_cast<std::uint32_t>(x[c]) ^ sign) & keep;
            acc += std::bit_cast<float>(bits);
        }
    }
    return acc;
}

inline void check_bad(std::uint32_t bad) {
    if (bad) throw corrupt_data_error("invalid ternary bit pattern 0b10 in packed data");
}

// Dequantizes rows [r0, r1) into dense[r * cols ...]. Throws on invalid codes.
inline void dequantize_rows(const PackedTernaryMatrix& p, float* dense,
                            std::size_t r0, std::size_t r1) {
    const std::size_t cols = p.cols();
    for (std::size_t r = r0; r < r1; ++r) {
        const auto row = p.row_bytes(r);
        const float s = p.scale(r);
        float* out = dense + (r - r0) * cols;
        for (std::size_t c = 0; c < cols; ++c)
            out[c] = s * static_cast<float>(decode_lane(row[c / 4] >> (2 * (c % 4))));
    }
}

inline void direct_rows(const PackedTernaryMatrix& p, const float* x, float* y,
                        std::size_t r0, std::size_t r1, std::uint32_t& bad) {
    for (std::size_t r = r0; r < r1; ++r) {
        const auto row = p.row_bytes(r);
        y[r - r0] = p.scale(r) * ternary_dot(row.data(), x, p.cols(), bad);
    }
}

}  // namespace detail

/// Oracle product: y_r = sum_c W[r,c] * x[c], ascending c, float32 accumulation.
inline std::vector<float> matvec_reference(const DenseMatrix& W, std::span<const float> x) {
    if (W.cols() != x.size())
        throw std::invalid_argument("matvec_reference: cols(W)=" + std::to_string(W.cols()) +
                                    " != len(x)=" + std::to_string(x.size()));
    std::vector<float> y(W.rows());
    for (std::size_t r = 0; r < W.rows(); ++r)
        y[r] = detail::dense_dot(W.row(r).data(), x.data(), W.cols());
    return y;
}

/// Dequantizes the whole matrix into workspace scratch, then multiplies like
/// the reference (identical summation order, so identical results).
inline std::vector<float> matvec_unpack(const PackedTernaryMatrix& p, std::span<const float> x,
                                        Workspace& ws) {
    if (p.cols() != x.size())
        throw std::invalid_argument("matvec_unpack: cols mismatch");
    auto dense = ws.acquire(p.rows() * p.cols());
    detail::dequantize_rows(p, dense.data(), 0, p.rows());
    std::vector<float> y(p.rows());
    for (std::size_t r = 0; r < p.rows(); ++r)
        y[r] = detail::dense_dot(dense.data() + r * p.cols(), x.data(), p.cols());
    return y;
}

/// Direct ternary product: per row, add/sub the inputs selected by the codes,
/// then apply the row scale once. Never materializes dense weights.
inline std::vector<float> matvec_ternary(const PackedTernaryMatrix& p, std::span<const float> x,
                                         Workspace& ws) {
    (void)ws;  // no scratch needed; kept for a uniform kernel signature
    if (p.cols() != x.size())
        throw std::invalid_argument("matvec_ternary: cols mismatch");
    std::vector<float> y(p.rows());
    std::uint32_t bad = 0;
    detail::direct_rows(p, x.data(), y.data(), 0, p.rows(), bad);
    detail::check_bad(bad);
    return y;
}

/// Batched product: column j of the result is the chosen variant's matvec of
/// column j of X. The parallel variant splits output rows across `workers`;
/// each worker owns a disjoint row block, so results do not depend on the
/// worker count.
inline DenseMatrix matmul_batch(const PackedTernaryMatrix& p, const DenseMatrix& X,
                                KernelVariant variant, std::size_t workers, Workspace& ws) {
    if (p.cols() != X.rows())
        throw std::invalid_argument("matmul_batch: cols(p)=" + std::to_string(p.cols()) +
                                    " != rows(X)=" + std::to_string(X.rows()));
    if (workers < 1) throw std::invalid_argument("matmul_batch: workers must be >= 1");

    const std::size_t rows = p.rows();
    const std::size_t cols = p.cols();
    const std::size_t batch = X.cols();
    DenseMatrix out(rows, batch);

    // Columns of X, made contiguous once.
    auto xt = ws.acquire(cols * batch);
    for (std::size_t k = 0; k < cols; ++k)
        for (std::size_t j = 0; j < batch; ++j) xt.data()[j * cols + k] = X.at(k, j);

    switch (variant) {
        case KernelVariant::reference_dense: {
            auto dense = ws.acquire(rows * cols);
            detail::dequantize_rows(p, dense.data(), 0, rows);
            for (std::size_t j = 0; j < batch; ++j) {
                const float* xj = xt.data() + j * cols;
                for (std::size_t r = 0; r < rows; ++r)
                    out.at(r, j) = detail::dense_dot(dense.data() + r * cols, xj, cols);
            }
            break;
        }
        case KernelVariant::unpack_then_multiply: {
            for (std::size_t j = 0; j < batch; ++j) {
                const auto y = matvec_unpack(p, {xt.data() + j * cols, cols}, ws);
                for (std::size_t r = 0; r < rows; ++r) out.at(r, j) = y[r];
            }
            break;
        }
        case KernelVariant::direct_ternary: {
            std::uint32_t bad = 0;
            for (std::size_t j = 0; j < batch; ++j) {
                const float* xj = xt.data() + j * cols;
                for (std::size_t r = 0; r < rows; ++r) {
                    out.at(r, j) = p.scale(r) * detail::ternary_dot(
                                           p.row_bytes(r).data(), xj, cols, bad);
                }
            }
            detail::check_bad(bad);
            break;
        }
        case KernelVariant::direct_ternary_parallel: {
            const std::size_t nw = std::min(workers, rows == 0 ? std::size_t{1} : rows);
            std::vector<std::uint32_t> bads(nw, 0);
            std::vector<std::thread> threads;
            threads.reserve(nw);
            const std::size_t base = rows / nw;
            const std::size_t rem = rows % nw;
            std::size_t r0 = 0;
            for (std::size_t w = 0; w < nw; ++w) {
                const std::size_t r1 = r0 + base + (w < rem ? 1 : 0);
                threads.emplace_back([&, w, r0, r1]() {
                    for (std::size_t j = 0; j < batch; ++j) {
                        const float* xj = xt.data() + j * cols;
                        for (std::size_t r = r0; r < r1; ++r) {
                            out.at(r, j) = p.scale(r) * detail::ternary_dot(
                                                   p.row_bytes(r).data(), xj, cols, bads[w]);
                        }
                    }
                });
                r0 = r1;
            }
            for (auto& t : threads) t.join();
            std::uint32_t bad = 0;
            for (auto b : bads) bad |= b;
            detail::check_bad(bad);
            break;
        }
    }
    return out;
}

struct ThroughputResult {
    double ops_per_second = 0.0;        // rows*cols*batch multiply-accumulates per second
    std::size_t peak_workspace_bytes = 0;
};

/// Times matmul_batch. One untimed warmup run, then `repetitions` timed runs;
/// reports ops/second at the median wall-clock time and the workspace
/// high-water mark.
inline ThroughputResult measure_throughput(const PackedTernaryMatrix& p, const DenseMatrix& X,
                                           KernelVariant variant, std::size_t workers,
                                           std::size_t repetitions) {
    if (repetitions < 1) throw std::invalid_argument("measure_throughput: repetitions must be >= 1");
    Workspace ws;
    using clock = std::chrono::steady_clock;
    (void)matmul_batch(p, X, variant, workers, ws);  // warmup
    std::vector<double> seconds(repetitions);
    for (std::size_t i = 0; i < repetitions; ++i) {
        const auto t0 = clock::now();
        (void)matmul_batch(p, X, variant, workers, ws);
        const auto t1 = clock::now();
        seconds[i] = std::chrono::duration<double>(t1 - t0).count();
    }
    std::sort(seconds.begin(), seconds.end());
    const double median = repetitions % 2 == 1
                              ? seconds[repetitions / 2]
                              : 0.5 * (seconds[repetitions / 2 - 1] + seconds[repetitions / 2]);
    const double ops = static_cast<double>(p.rows()) * static_cast<double>(p.cols()) *
                       static_cast<double>(X.cols());
    ThroughputResult res;
    res.ops_per_second = median > 0.0 ? ops / median : 0.0;
    res.peak_workspace_bytes = ws.peak_bytes();
    return res;
}

}  // namespace ternkit
