#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ternkit/model.hpp"
#include "ternkit/quantize.hpp"

namespace ternkit {

/// All layer indices eligible for quantization (everything but the first and
/// last fully connected layer).
inline std::vector<std::size_t> interior_layer_indices(const TinyLM& m) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < m.layers.size(); ++i)
        if (m.is_interior(i)) idx.push_back(i);
    return idx;
}

/// Quantizes the selected layers of a full-precision model.
///
/// Ternary mode runs the k-means initializer per neuron: latents become the
/// scaled weights, the learned per-row scale starts at the centroid mu.
/// Binary mode clips the raw weights to [-1,1] and starts scales at 1.
///
/// Every unselected weight tensor (embedding, first/last/unselected layers)
/// is marked for int8 storage on save; its in-memory values stay untouched.
inline TinyLM quantize_model(const TinyLM& m, int iters, LayerMode target_mode,
                             std::span<const std::size_t> selection,
                             const QuantizerConfig& cfg = {}) {
    m.validate();
    if (target_mode == LayerMode::full_precision)
        throw std::invalid_argument("quantize_model: target mode must be ternary or binary");
    TinyLM q = m;
    for (std::size_t idx : selection) {
        if (idx >= q.layers.size() || !q.is_interior(idx))
            throw std::invalid_argument("quantize_model: layer " + std::to_string(idx + 1) +
                                        " is not an interior layer");
        LayerState& l = q.layers[idx];
        if (l.mode != LayerMode::full_precision)
            throw std::invalid_argument("quantize_model: layer " + std::to_string(idx + 1) +
                                        " is already quantized");
        if (target_mode == LayerMode::ternary) {
            TernarizedLayer t = ternarize_layer(l.latent, iters, cfg);
            l.latent = std::move(t.latent);
            l.scale.assign(t.packed.scales().begin(), t.packed.scales().end());
        } else {
            TernarizedLayer t = binarize_layer(l.latent);
            l.latent = std::move(t.latent);
            l.scale.assign(t.packed.scales().begin(), t.packed.scales().end());
        }
        l.mode = target_mode;
        l.storage = StorageKind::ternary_packed;
    }
    q.embedding_storage = StorageKind::int8;
    for (auto& l : q.layers)
        if (l.mode == LayerMode::full_precision) l.storage = StorageKind::int8;
    return q;
}

/// Mean squared difference between a quantized layer's effective weights and
/// reference weights (normally the pre-quantization values).
inline double layer_quantization_error(const LayerState& quantized, const DenseMatrix& original) {
    if (quantized.latent.rows() != original.rows() || quantized.latent.cols() != original.cols())
        throw std::invalid_argument("layer_quantization_error: shape mismatch");
    const DenseMatrix eff = effective_weights(quantized);
    double acc = 0.0;
    for (std::size_t i = 0; i < eff.size(); ++i) {
        const double d = static_cast<double>(eff.flat()[i]) - original.flat()[i];
        acc += d * d;
    }
    return acc / static_cast<double>(eff.size());
}

}  // namespace ternkit
