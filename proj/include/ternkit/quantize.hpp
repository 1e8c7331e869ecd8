#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "ternkit/dense.hpp"
#include "ternkit/ternary.hpp"

namespace ternkit {

struct QuantizerConfig {
    int iterations = 10;
    float zero_fallback_scale = 1.0f;
};

/// Per-neuron result of the constrained k-means initializer.
/// `s` multiplies the raw weights so the free-cluster boundary lands at 0.5,
/// `mu` is the free-cluster centroid (and the packed per-row scale).
struct InitResult {
    float s = 1.0f;
    float mu = 1.0f;
    std::vector<float> latent;
};

namespace detail {

inline void check_neuron_input(std::span<const float> w) {
    if (w.empty()) throw std::invalid_argument("kmeans_init_neuron: empty weight vector");
    for (float v : w)
        if (!std::isfinite(v)) throw std::invalid_argument("kmeans_init_neuron: non-finite weight");
}

}  // namespace detail

/// Centroid trajectory of the constrained k-means loop: mu_0 is the mean of
/// |w|, each following entry is one assignment/update round. Stops early and
/// truncates if the free cluster empties or the centroid hits zero.
inline std::vector<double> kmeans_mu_trace(std::span<const float> w, int iters) {
    detail::check_neuron_input(w);
    if (iters < 0) throw std::invalid_argument("kmeans_mu_trace: negative iteration count");

    double mu = 0.0;
    for (float v : w) mu += std::fabs(static_cast<double>(v));
    mu /= static_cast<double>(w.size());

    std::vector<double> trace{mu};
    for (int t = 0; t < iters; ++t) {
        if (mu == 0.0) break;
        double sum = 0.0;
        std::size_t count = 0;
        for (float v : w) {
            const double a = std::fabs(static_cast<double>(v));
            // e = a - mu; the free cluster keeps points with e > -mu/2.
            if (a - mu > -0.5 * mu) {
                sum += a;
                ++count;
            }
        }
        if (count == 0) break;
        mu = sum / static_cast<double>(count);
        trace.push_back(mu);
    }
    return trace;
}

/// Constrained k-means initializer for a single neuron. Degenerate neurons
/// (all-zero, emptied cluster) take the zero fallback so the layer stays
/// well defined.
inline InitResult kmeans_init_neuron(std::span<const float> w, int iters,
                                     const QuantizerConfig& cfg = {}) {
    const auto trace = kmeans_mu_trace(w, iters);

    InitResult res;
    const bool converged_cleanly =
        trace.size() == static_cast<std::size_t>(iters) + 1 && trace.back() > 0.0;
    if (converged_cleanly) {
        res.mu = static_cast<float>(trace.back());
        res.s = 1.0f / res.mu;
    } else {
        res.s = cfg.zero_fallback_scale;
        res.mu = 1.0f / res.s;
    }
    res.latent.resize(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) res.latent[i] = w[i] * res.s;
    return res;
}

/// Three-cluster objective with centroids {-mu, 0, mu}. Boundary points at
/// |w| = mu/2 count toward the outer clusters.
inline double kmeans_objective(std::span<const float> w, double mu) {
    if (mu < 0.0) throw std::invalid_argument("kmeans_objective: mu must be >= 0");
    double f = 0.0;
    for (float wf : w) {
        const double wi = wf;
        if (wi >= 0.5 * mu) {
            f += (wi - mu) * (wi - mu);
        } else if (wi <= -0.5 * mu) {
            f += (wi + mu) * (wi + mu);
        } else {
            f += wi * wi;
        }
    }
    return f;
}

/// Mean squared difference between the ternary reconstruction mu*tern(w*s)
/// and the raw weights.
inline double quantization_error(std::span<const float> w, const InitResult& res) {
    if (w.size() != res.latent.size())
        throw std::invalid_argument("quantization_error: result does not match weight vector");
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double recon = static_cast<double>(tern(w[i] * res.s)) * res.mu;
        const double d = recon - w[i];
        acc += d * d;
    }
    return acc / static_cast<double>(w.size());
}

/// Runs the initializer over every row of a layer. Row r matches
/// kmeans_init_neuron(row r) exactly.
inline std::vector<InitResult> kmeans_init_layer(const DenseMatrix& W, int iters,
                                                 const QuantizerConfig& cfg = {}) {
    std::vector<InitResult> out;
    out.reserve(W.rows());
    for (std::size_t r = 0; r < W.rows(); ++r)
        out.push_back(kmeans_init_neuron(W.row(r), iters, cfg));
    return out;
}

struct TernarizedLayer {
    PackedTernaryMatrix packed;
    DenseMatrix latent;  // scaled latent weights, one row per neuron
};

/// Whole-layer ternarization: per-row k-means init, staircase codes of the
/// scaled latents, per-row centroid as the packed scale.
inline TernarizedLayer ternarize_layer(const DenseMatrix& W, int iters,
                                       const QuantizerConfig& cfg = {}) {
    const auto results = kmeans_init_layer(W, iters, cfg);
    std::vector<TernaryCode> codes(W.rows() * W.cols());
    std::vector<float> scales(W.rows());
    DenseMatrix latent(W.rows(), W.cols());
    for (std::size_t r = 0; r < W.rows(); ++r) {
        scales[r] = results[r].mu;
        for (std::size_t c = 0; c < W.cols(); ++c) {
            latent.at(r, c) = results[r].latent[c];
            codes[r * W.cols() + c] = tern(results[r].latent[c]);
        }
    }
    return {pack_matrix(W.rows(), W.cols(), codes, scales), std::move(latent)};
}

/// Binary counterpart used by the baseline: latents are the raw weights
/// clipped to [-1,1], scales start at 1, codes are sign(latent) with
/// sign(0) = +1.
inline TernarizedLayer binarize_layer(const DenseMatrix& W) {
    std::vector<TernaryCode> codes(W.rows() * W.cols());
    std::vector<float> scales(W.rows(), 1.0f);
    DenseMatrix latent(W.rows(), W.cols());
    for (std::size_t r = 0; r < W.rows(); ++r) {
        for (std::size_t c = 0; c < W.cols(); ++c) {
            const float clipped = std::clamp(W.at(r, c), -1.0f, 1.0f);
            latent.at(r, c) = clipped;
            codes[r * W.cols() + c] = clipped < 0.0f ? TernaryCode{-1} : TernaryCode{1};
        }
    }
    return {pack_matrix(W.rows(), W.cols(), codes, scales), std::move(latent)};
}

/// Symmetric per-tensor int8 tensor; dequantized value is q * scale.
struct Int8Tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::int8_t> q;
    float scale = 1.0f;
};

inline Int8Tensor int8_quantize(const DenseMatrix& W) {
    Int8Tensor t;
    t.rows = W.rows();
    t.cols = W.cols();
    t.q.resize(W.size());
    float maxabs = 0.0f;
    for (float v : W.flat()) maxabs = std::max(maxabs, std::fabs(v));
    t.scale = maxabs > 0.0f ? maxabs / 127.0f : 1.0f;
    for (std::size_t i = 0; i < W.size(); ++i) {
        // std::round = round half away from zero
        const float r = std::round(W.flat()[i] / t.scale);
        t.q[i] = static_cast<std::int8_t>(std::clamp(r, -127.0f, 127.0f));
    }
    return t;
}

inline DenseMatrix int8_dequantize(const Int8Tensor& t) {
    DenseMatrix W(t.rows, t.cols);
    for (std::size_t i = 0; i < t.q.size(); ++i)
        W.data()[i] = static_cast<float>(t.q[i]) * t.scale;
    return W;
}

}  // namespace ternkit
