#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ternkit/dense.hpp"
#include "ternkit/ternary.hpp"

namespace ternkit {

using TokenId = std::int32_t;

enum class LayerMode { full_precision, ternary, binary };

inline const char* to_string(LayerMode m) {
    switch (m) {
        case LayerMode::full_precision: return "full_precision";
        case LayerMode::ternary: return "ternary";
        case LayerMode::binary: return "binary";
    }
    return "?";
}

/// On-disk encoding chosen per tensor when the model is saved.
enum class StorageKind { dense, int8, ternary_packed };

/// One fully connected layer. `latent` holds the trainable weights; in
/// quantized modes the weights actually used are scale * tern(latent)
/// (or scale * sign(latent) for binary), recomputed at every forward pass.
struct LayerState {
    DenseMatrix latent;        // out x in
    std::vector<float> scale;  // one per output neuron, used in quantized modes
    std::vector<float> bias;   // one per output neuron
    LayerMode mode = LayerMode::full_precision;
    StorageKind storage = StorageKind::dense;

    std::size_t out_dim() const { return latent.rows(); }
    std::size_t in_dim() const { return latent.cols(); }
};

/// Dequantized weights a layer contributes to the forward pass.
inline DenseMatrix effective_weights(const LayerState& l) {
    switch (l.mode) {
        case LayerMode::full_precision:
            return l.latent;
        case LayerMode::ternary: {
            DenseMatrix W(l.latent.rows(), l.latent.cols());
            for (std::size_t r = 0; r < W.rows(); ++r)
                for (std::size_t c = 0; c < W.cols(); ++c)
                    W.at(r, c) = l.scale[r] * static_cast<float>(tern(l.latent.at(r, c)));
            return W;
        }
        case LayerMode::binary: {
            DenseMatrix W(l.latent.rows(), l.latent.cols());
            for (std::size_t r = 0; r < W.rows(); ++r)
                for (std::size_t c = 0; c < W.cols(); ++c)
                    W.at(r, c) = l.latent.at(r, c) < 0.0f ? -l.scale[r] : l.scale[r];
            return W;
        }
    }
    throw std::logic_error("effective_weights: bad mode");
}

/// Fixed-context next-token model: token embeddings, the context window
/// concatenated into one vector, a stack of fully connected layers with
/// clipped ReLUs in between, logits over the vocabulary at the end.
///
/// The first and last layers always stay full precision; only interior
/// layers may be ternary or binary.
struct TinyLM {
    std::size_t vocab_size = 0;
    std::size_t context = 0;
    std::size_t embed_dim = 0;
    float activation_clip = 10.0f;
    DenseMatrix embedding;  // vocab x embed_dim
    StorageKind embedding_storage = StorageKind::dense;
    std::vector<LayerState> layers;

    std::size_t input_dim() const { return context * embed_dim; }

    bool is_interior(std::size_t layer_idx) const {
        return layer_idx > 0 && layer_idx + 1 < layers.size();
    }

    /// Fresh full-precision model with seeded uniform init.
    /// `hidden` lists the output widths of all layers before the final
    /// vocab-sized one.
    static TinyLM create(std::size_t vocab, std::size_t context, std::size_t embed_dim,
                         const std::vector<std::size_t>& hidden, std::uint64_t seed) {
        if (vocab == 0 || context == 0 || embed_dim == 0)
            throw std::invalid_argument("TinyLM::create: zero dimension");
        TinyLM m;
        m.vocab_size = vocab;
        m.context = context;
        m.embed_dim = embed_dim;
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<float> emb_dist(-0.1f, 0.1f);
        m.embedding = DenseMatrix(vocab, embed_dim);
        for (std::size_t i = 0; i < m.embedding.size(); ++i) m.embedding.data()[i] = emb_dist(rng);

        std::vector<std::size_t> outs = hidden;
        outs.push_back(vocab);
        std::size_t in = m.input_dim();
        for (std::size_t out : outs) {
            LayerState l;
            l.latent = DenseMatrix(out, in);
            const float bound = 1.0f / std::sqrt(static_cast<float>(in));
            std::uniform_real_distribution<float> w_dist(-bound, bound);
            for (std::size_t i = 0; i < l.latent.size(); ++i) l.latent.data()[i] = w_dist(rng);
            l.scale.assign(out, 1.0f);
            l.bias.assign(out, 0.0f);
            m.layers.push_back(std::move(l));
            in = out;
        }
        return m;
    }

    void validate() const {
        if (layers.empty()) throw std::invalid_argument("TinyLM: no layers");
        if (embedding.rows() != vocab_size || embedding.cols() != embed_dim)
            throw std::invalid_argument("TinyLM: embedding shape mismatch");
        if (!(activation_clip > 0.0f))
            throw std::invalid_argument("TinyLM: activation_clip must be positive");
        std::size_t in = input_dim();
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& l = layers[i];
            if (l.in_dim() != in)
                throw std::invalid_argument("TinyLM: layer " + std::to_string(i) +
                                            " input dim mismatch");
            if (l.scale.size() != l.out_dim() || l.bias.size() != l.out_dim())
                throw std::invalid_argument("TinyLM: layer " + std::to_string(i) +
                                            " scale/bias length mismatch");
            if (l.mode != LayerMode::full_precision && !is_interior(i))
                throw std::invalid_argument("TinyLM: only interior layers may be quantized");
            in = l.out_dim();
        }
        if (layers.back().out_dim() != vocab_size)
            throw std::invalid_argument("TinyLM: last layer must emit vocab_size logits");
    }
};

/// Activations recorded by a forward pass, as needed for backpropagation.
struct ForwardCache {
    std::vector<TokenId> tokens;              // context window that produced this pass
    std::vector<float> input;                 // concatenated embeddings
    std::vector<std::vector<float>> pre;      // z_i, per layer
    std::vector<std::vector<float>> post;     // clipped ReLU outputs, per non-final layer
    std::vector<float>& logits() { return pre.back(); }
    const std::vector<float>& logits() const { return pre.back(); }
};

namespace detail {

inline void check_tokens(const TinyLM& m, std::span<const TokenId> tokens) {
    if (tokens.size() != m.context)
        throw std::invalid_argument("forward: expected " + std::to_string(m.context) +
                                    " context tokens, got " + std::to_string(tokens.size()));
    for (TokenId t : tokens)
        if (t < 0 || static_cast<std::size_t>(t) >= m.vocab_size)
            throw std::out_of_range("forward: token id " + std::to_string(t) +
                                    " outside vocabulary");
}

// y = W x + b, ascending-index float32 accumulation, bias added last.
inline void affine(const DenseMatrix& W, std::span<const float> x, std::span<const float> b,
                   std::vector<float>& y) {
    y.resize(W.rows());
    for (std::size_t r = 0; r < W.rows(); ++r) {
        float acc = 0.0f;
        const float* w = W.row(r).data();
        for (std::size_t c = 0; c < W.cols(); ++c) acc += w[c] * x[c];
        y[r] = acc + b[r];
    }
}

}  // namespace detail

/// Forward pass against externally materialized effective weights (one
/// DenseMatrix per layer). Fills the cache for backpropagation.
inline void forward_cached(const TinyLM& m, std::span<const DenseMatrix> eff,
                           std::span<const TokenId> tokens, ForwardCache& cache) {
    detail::check_tokens(m, tokens);
    cache.tokens.assign(tokens.begin(), tokens.end());
    cache.input.resize(m.input_dim());
    for (std::size_t i = 0; i < m.context; ++i) {
        const auto row = m.embedding.row(static_cast<std::size_t>(tokens[i]));
        std::copy(row.begin(), row.end(), cache.input.begin() + i * m.embed_dim);
    }
    cache.pre.resize(m.layers.size());
    cache.post.resize(m.layers.size() == 0 ? 0 : m.layers.size() - 1);
    std::span<const float> h{cache.input.data(), cache.input.size()};
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        detail::affine(eff[i], h, m.layers[i].bias, cache.pre[i]);
        if (i + 1 < m.layers.size()) {
            auto& a = cache.post[i];
            a.resize(cache.pre[i].size());
            for (std::size_t r = 0; r < a.size(); ++r) {
                const float z = cache.pre[i][r];
                a[r] = std::min(z > 0.0f ? z : 0.0f, m.activation_clip);
            }
            h = {a.data(), a.size()};
        }
    }
}

inline std::vector<DenseMatrix> materialize_effective_weights(const TinyLM& m) {
    std::vector<DenseMatrix> eff;
    eff.reserve(m.layers.size());
    for (const auto& l : m.layers) eff.push_back(effective_weights(l));
    return eff;
}

/// Deterministic logits for one context window.
inline std::vector<float> forward(const TinyLM& m, std::span<const TokenId> tokens) {
    const auto eff = materialize_effective_weights(m);
    ForwardCache cache;
    forward_cached(m, eff, tokens, cache);
    return cache.logits();
}

}  // namespace ternkit
