#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <thread>
#include <vector>

#include "ternkit/corpus.hpp"
#include "ternkit/kernels.hpp"
#include "ternkit/model.hpp"

namespace ternkit {

/// Executes a TinyLM forward pass through the packed kernels. Quantized
/// layers stay packed (except under reference_dense, which keeps dequantized
/// float32 weights resident); everything else runs dense.
class GenerationEngine {
public:
    GenerationEngine(const TinyLM& m, KernelVariant variant, std::size_t workers)
        : model_(&m), variant_(variant), workers_(std::max<std::size_t>(1, workers)) {
        m.validate();
        packed_.resize(m.layers.size());
        dense_.resize(m.layers.size());
        model_bytes_ = m.embedding.size() * sizeof(float);
        for (std::size_t i = 0; i < m.layers.size(); ++i) {
            const LayerState& l = m.layers[i];
            if (l.mode != LayerMode::full_precision &&
                variant != KernelVariant::reference_dense) {
                packed_[i] = pack_layer(l);
                model_bytes_ += packed_[i]->storage_bytes();
            } else {
                dense_[i] = effective_weights(l);
                model_bytes_ += dense_[i].size() * sizeof(float);
            }
            model_bytes_ += l.bias.size() * sizeof(float);
        }
    }

    const TinyLM& model() const { return *model_; }
    std::size_t model_bytes() const { return model_bytes_; }
    std::size_t peak_workspace_bytes() const { return ws_.peak_bytes(); }

    /// Logits for one context window, via the configured kernel variant.
    std::vector<float> logits(std::span<const TokenId> tokens) {
        const TinyLM& m = *model_;
        if (tokens.size() != m.context)
            throw std::invalid_argument("GenerationEngine: bad context length");
        std::vector<float> h(m.input_dim());
        for (std::size_t i = 0; i < m.context; ++i) {
            const TokenId t = tokens[i];
            if (t < 0 || static_cast<std::size_t>(t) >= m.vocab_size)
                throw std::out_of_range("GenerationEngine: token id outside vocabulary");
            const auto row = m.embedding.row(static_cast<std::size_t>(t));
            std::copy(row.begin(), row.end(), h.begin() + i * m.embed_dim);
        }
        std::vector<float> y;
        for (std::size_t i = 0; i < m.layers.size(); ++i) {
            const LayerState& l = m.layers[i];
            y = packed_[i] ? packed_matvec(*packed_[i], h) : matvec_reference(dense_[i], h);
            for (std::size_t r = 0; r < y.size(); ++r) y[r] += l.bias[r];
            if (i + 1 < m.layers.size()) {
                for (float& v : y) v = std::min(v > 0.0f ? v : 0.0f, m.activation_clip);
                h = std::move(y);
            }
        }
        return y;
    }

private:
    static PackedTernaryMatrix pack_layer(const LayerState& l) {
        std::vector<TernaryCode> codes(l.latent.size());
        for (std::size_t r = 0; r < l.latent.rows(); ++r)
            for (std::size_t c = 0; c < l.latent.cols(); ++c) {
                const float v = l.latent.at(r, c);
                codes[r * l.latent.cols() + c] =
                    l.mode == LayerMode::binary ? (v < 0.0f ? TernaryCode{-1} : TernaryCode{1})
                                                : tern(v);
            }
        return pack_matrix(l.latent.rows(), l.latent.cols(), codes, l.scale);
    }

    std::vector<float> packed_matvec(const PackedTernaryMatrix& p, std::span<const float> x) {
        switch (variant_) {
            case KernelVariant::unpack_then_multiply:
                return matvec_unpack(p, x, ws_);
            case KernelVariant::direct_ternary:
                return matvec_ternary(p, x, ws_);
            case KernelVariant::direct_ternary_parallel: {
                const std::size_t rows = p.rows();
                std::vector<float> y(rows);
                const std::size_t nw = std::min(workers_, rows == 0 ? std::size_t{1} : rows);
                std::vector<std::uint32_t> bads(nw, 0);
                std::vector<std::thread> threads;
                threads.reserve(nw);
                const std::size_t base = rows / nw;
                const std::size_t rem = rows % nw;
                std::size_t r0 = 0;
                for (std::size_t w = 0; w < nw; ++w) {
                    const std::size_t r1 = r0 + base + (w < rem ? 1 : 0);
                    threads.emplace_back([&, w, r0, r1]() {
                        detail::direct_rows(p, x.data(), y.data() + r0, r0, r1, bads[w]);
                    });
                    r0 = r1;
                }
                for (auto& t : threads) t.join();
                std::uint32_t bad = 0;
                for (auto b : bads) bad |= b;
                detail::check_bad(bad);
                return y;
            }
            case KernelVariant::reference_dense:
                break;  // never packed under this variant
        }
        throw std::logic_error("packed_matvec: unexpected variant");
    }

    const TinyLM* model_;
    KernelVariant variant_;
    std::size_t workers_;
    Workspace ws_;
    std::vector<std::optional<PackedTernaryMatrix>> packed_;
    std::vector<DenseMatrix> dense_;
    std::size_t model_bytes_ = 0;
};

struct GenerateResult {
    std::vector<TokenId> tokens;
    bool tie_at_tolerance = false;  // some argmax was within tolerance of the runner-up
};

/// Greedy decoding: picks the most likely token each step, ties broken by the
/// lowest token id. Near-ties (top two logits within 1e-5 relative) are
/// flagged so cross-variant runs can be audited instead of silently drifting.
inline GenerateResult generate(GenerationEngine& engine, std::span<const TokenId> prompt,
                               std::size_t token_count) {
    if (token_count < 1) throw std::invalid_argument("generate: token count must be >= 1");
    const TinyLM& m = engine.model();
    std::vector<TokenId> window(m.context, 0);
    for (std::size_t i = 0; i < prompt.size() && i < m.context; ++i)
        window[m.context - 1 - i] = prompt[prompt.size() - 1 - i];

    GenerateResult res;
    res.tokens.reserve(token_count);
    for (std::size_t n = 0; n < token_count; ++n) {
        const auto logits = engine.logits(window);
        std::size_t best = 0;
        for (std::size_t i = 1; i < logits.size(); ++i)
            if (logits[i] > logits[best]) best = i;
        float second = -std::numeric_limits<float>::infinity();
        for (std::size_t i = 0; i < logits.size(); ++i)
            if (i != best) second = std::max(second, logits[i]);
        if (logits.size() > 1 &&
            logits[best] - second <= 1e-5f * std::max(1.0f, std::fabs(logits[best])))
            res.tie_at_tolerance = true;
        const TokenId t = static_cast<TokenId>(best);
        res.tokens.push_back(t);
        window.erase(window.begin());
        window.push_back(t);
    }
    return res;
}

}  // namespace ternkit
