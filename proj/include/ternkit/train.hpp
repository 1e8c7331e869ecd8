#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ternkit/corpus.hpp"
#include "ternkit/model.hpp"

namespace ternkit {

struct TrainConfig {
    float base_lr = 1e-3f;
    std::size_t epochs = 2;
    std::size_t batch_size = 8;
    std::size_t grad_accumulation = 2;
    float activation_clip = 10.0f;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(base_lr > 0.0f)) throw std::invalid_argument("TrainConfig: base_lr must be > 0");
        if (batch_size < 1 || grad_accumulation < 1)
            throw std::invalid_argument("TrainConfig: counts must be >= 1");
        if (!(activation_clip > 0.0f))
            throw std::invalid_argument("TrainConfig: activation_clip must be > 0");
    }
};

struct Gradients {
    DenseMatrix d_embedding;
    std::vector<DenseMatrix> d_latent;
    std::vector<std::vector<float>> d_scale;
    std::vector<std::vector<float>> d_bias;

    static Gradients zeros_like(const TinyLM& m) {
        Gradients g;
        g.d_embedding = DenseMatrix(m.embedding.rows(), m.embedding.cols());
        for (const auto& l : m.layers) {
            g.d_latent.emplace_back(l.latent.rows(), l.latent.cols());
            g.d_scale.emplace_back(l.scale.size(), 0.0f);
            g.d_bias.emplace_back(l.bias.size(), 0.0f);
        }
        return g;
    }

    void accumulate(const Gradients& o) {
        for (std::size_t i = 0; i < d_embedding.size(); ++i)
            d_embedding.data()[i] += o.d_embedding.data()[i];
        for (std::size_t l = 0; l < d_latent.size(); ++l) {
            for (std::size_t i = 0; i < d_latent[l].size(); ++i)
                d_latent[l].data()[i] += o.d_latent[l].data()[i];
            for (std::size_t i = 0; i < d_scale[l].size(); ++i) d_scale[l][i] += o.d_scale[l][i];
            for (std::size_t i = 0; i < d_bias[l].size(); ++i) d_bias[l][i] += o.d_bias[l][i];
        }
    }

    void scale_by(float f) {
        for (std::size_t i = 0; i < d_embedding.size(); ++i) d_embedding.data()[i] *= f;
        for (std::size_t l = 0; l < d_latent.size(); ++l) {
            for (std::size_t i = 0; i < d_latent[l].size(); ++i) d_latent[l].data()[i] *= f;
            for (auto& v : d_scale[l]) v *= f;
            for (auto& v : d_bias[l]) v *= f;
        }
    }
};

/// Cross-entropy of one logit vector against a target id. Probabilities are
/// computed with the usual max-shifted softmax.
inline double softmax_cross_entropy(std::span<const float> logits, TokenId target,
                                    std::vector<float>* probs_out = nullptr) {
    if (target < 0 || static_cast<std::size_t>(target) >= logits.size())
        throw std::out_of_range("softmax_cross_entropy: target outside vocabulary");
    float mx = logits[0];
    for (float v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    for (float v : logits) sum += std::exp(static_cast<double>(v) - mx);
    const double lse = std::log(sum) + mx;
    if (probs_out) {
        probs_out->resize(logits.size());
        for (std::size_t i = 0; i < logits.size(); ++i)
            (*probs_out)[i] = static_cast<float>(std::exp(static_cast<double>(logits[i]) - lse));
    }
    return lse - static_cast<double>(logits[target]);
}

namespace detail {

/// Core backward engine: given dL/dlogits, walks the stack once and maps the
/// effective-weight gradient onto latent/scale/bias per the layer mode.
/// The straight-through estimator enters exactly here: through tern/sign the
/// latent gradient is scale[r] * dL/dW*[r,c].
inline Gradients backward_from_logit_grad(const TinyLM& m, std::span<const DenseMatrix> eff,
                                          const ForwardCache& cache,
                                          std::span<const float> dlogits) {
    Gradients g = Gradients::zeros_like(m);
    const std::size_t L = m.layers.size();
    std::vector<float> dz(dlogits.begin(), dlogits.end());
    std::vector<float> da;

    for (std::size_t li = L; li-- > 0;) {
        const LayerState& layer = m.layers[li];
        const std::span<const float> a = li == 0
                                             ? std::span<const float>(cache.input)
                                             : std::span<const float>(cache.post[li - 1]);
        DenseMatrix& dW = g.d_latent[li];  // holds dL/dW* first, mapped below
        for (std::size_t r = 0; r < layer.out_dim(); ++r) {
            const float gr = dz[r];
            g.d_bias[li][r] = gr;
            float* dwr = dW.row(r).data();
            for (std::size_t c = 0; c < layer.in_dim(); ++c) dwr[c] = gr * a[c];
        }

        if (li > 0) {
            da.assign(layer.in_dim(), 0.0f);
            for (std::size_t r = 0; r < layer.out_dim(); ++r) {
                const float gr = dz[r];
                const float* w = eff[li].row(r).data();
                for (std::size_t c = 0; c < layer.in_dim(); ++c) da[c] += w[c] * gr;
            }
            dz.resize(layer.in_dim());
            // clipped ReLU passes gradient only on (0, clip)
            for (std::size_t c = 0; c < layer.in_dim(); ++c) {
                const float z = cache.pre[li - 1][c];
                dz[c] = (z > 0.0f && z < m.activation_clip) ? da[c] : 0.0f;
            }
        } else {
            da.assign(layer.in_dim(), 0.0f);
            for (std::size_t r = 0; r < layer.out_dim(); ++r) {
                const float gr = dz[r];
                const float* w = eff[li].row(r).data();
                for (std::size_t c = 0; c < layer.in_dim(); ++c) da[c] += w[c] * gr;
            }
        }

        switch (layer.mode) {
            case LayerMode::full_precision:
                break;  // dlatent is dW* itself; scale unused
            case LayerMode::ternary:
                for (std::size_t r = 0; r < layer.out_dim(); ++r) {
                    float* dwr = dW.row(r).data();
                    float ds = 0.0f;
                    for (std::size_t c = 0; c < layer.in_dim(); ++c) {
                        const float code = static_cast<float>(tern(layer.latent.at(r, c)));
                        ds += code * dwr[c];
                        dwr[c] = layer.scale[r] * dwr[c];
                    }
                    g.d_scale[li][r] = ds;
                }
                break;
            case LayerMode::binary:
                for (std::size_t r = 0; r < layer.out_dim(); ++r) {
                    float* dwr = dW.row(r).data();
                    float ds = 0.0f;
                    for (std::size_t c = 0; c < layer.in_dim(); ++c) {
                        const float code = layer.latent.at(r, c) < 0.0f ? -1.0f : 1.0f;
                        ds += code * dwr[c];
                        dwr[c] = layer.scale[r] * dwr[c];
                    }
                    g.d_scale[li][r] = ds;
                }
                break;
        }
    }

    // input gradient folds back onto the looked-up embedding rows
    for (std::size_t i = 0; i < m.context; ++i) {
        const auto t = static_cast<std::size_t>(cache.tokens[i]);
        float* er = g.d_embedding.row(t).data();
        for (std::size_t k = 0; k < m.embed_dim; ++k) er[k] += da[i * m.embed_dim + k];
    }
    return g;
}

}  // namespace detail

/// Loss and parameter gradients for one (context, target) sample.
inline std::pair<double, Gradients> backward_ste(const TinyLM& m,
                                                 std::span<const DenseMatrix> eff,
                                                 const ForwardCache& cache, TokenId target) {
    std::vector<float> probs;
    const double loss = softmax_cross_entropy(cache.logits(), target, &probs);
    probs[static_cast<std::size_t>(target)] -= 1.0f;
    return {loss, detail::backward_from_logit_grad(m, eff, cache, probs)};
}

inline std::pair<double, Gradients> backward_ste(const TinyLM& m, std::span<const TokenId> tokens,
                                                 TokenId target) {
    const auto eff = materialize_effective_weights(m);
    ForwardCache cache;
    forward_cached(m, eff, tokens, cache);
    return backward_ste(m, eff, cache, target);
}

/// One SGD update over every trainable tensor, followed by the latent clip
/// of quantized layers. Scales stay strictly positive.
inline void sgd_step(TinyLM& m, const Gradients& g, float lr) {
    if (g.d_latent.size() != m.layers.size() ||
        g.d_embedding.rows() != m.embedding.rows() ||
        g.d_embedding.cols() != m.embedding.cols())
        throw std::invalid_argument("sgd_step: gradient shapes do not match model");
    for (std::size_t i = 0; i < m.embedding.size(); ++i)
        m.embedding.data()[i] -= lr * g.d_embedding.data()[i];
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
        LayerState& l = m.layers[li];
        if (g.d_latent[li].rows() != l.latent.rows() || g.d_latent[li].cols() != l.latent.cols() ||
            g.d_bias[li].size() != l.bias.size() || g.d_scale[li].size() != l.scale.size())
            throw std::invalid_argument("sgd_step: layer " + std::to_string(li) + " shape mismatch");
        for (std::size_t i = 0; i < l.latent.size(); ++i)
            l.latent.data()[i] -= lr * g.d_latent[li].data()[i];
        for (std::size_t i = 0; i < l.bias.size(); ++i) l.bias[i] -= lr * g.d_bias[li][i];
        if (l.mode != LayerMode::full_precision) {
            for (std::size_t i = 0; i < l.scale.size(); ++i) {
                l.scale[i] -= lr * g.d_scale[li][i];
                l.scale[i] = std::max(l.scale[i], 1e-6f);
            }
            for (std::size_t i = 0; i < l.latent.size(); ++i)
                l.latent.data()[i] = std::clamp(l.latent.data()[i], -1.0f, 1.0f);
        }
    }
}

/// Cosine annealing: base_lr at step 0 down to min_lr at total_steps.
inline double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr,
                        double min_lr = 0.0) {
    if (step > total_steps) throw std::invalid_argument("cosine_lr: step > total_steps");
    if (total_steps == 0) return base_lr;
    const double t = static_cast<double>(step) / static_cast<double>(total_steps);
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * t));
}

struct StepRecord {
    std::size_t step = 0;  // 1-based optimizer step
    double lr = 0.0;
    double loss = 0.0;
};

struct TrainLog {
    std::vector<StepRecord> steps;

    /// One `step,lr,loss` line per optimizer step.
    std::string to_csv() const {
        std::string out;
        char buf[96];
        for (const auto& s : steps) {
            std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g\n", s.step, s.lr, s.loss);
            out += buf;
        }
        return out;
    }
};

/// SGD fine-tuning with gradient accumulation and cosine annealing.
/// Deterministic for a fixed seed. The model is updated in place.
inline TrainLog train(TinyLM& m, const Corpus& corpus, const TrainConfig& cfg) {
    cfg.validate();
    m.validate();
    if (corpus.documents.empty()) throw std::invalid_argument("train: empty corpus");

    TrainLog log;
    if (cfg.epochs == 0) return log;
    m.activation_clip = cfg.activation_clip;

    struct Sample {
        std::uint32_t doc;
        std::uint32_t pos;
    };
    std::vector<Sample> samples;
    for (std::size_t d = 0; d < corpus.documents.size(); ++d) {
        if (corpus.documents[d].empty()) throw std::invalid_argument("train: empty document");
        for (std::size_t p = 0; p < corpus.documents[d].size(); ++p)
            samples.push_back({static_cast<std::uint32_t>(d), static_cast<std::uint32_t>(p)});
    }

    const std::size_t micro_per_epoch = (samples.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t steps_per_epoch =
        (micro_per_epoch + cfg.grad_accumulation - 1) / cfg.grad_accumulation;
    const std::size_t total_steps = steps_per_epoch * cfg.epochs;

    std::mt19937_64 rng(cfg.seed);
    ForwardCache cache;
    std::size_t step_idx = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(samples.begin(), samples.end(), rng);
        std::size_t cursor = 0;
        while (cursor < samples.size()) {
            Gradients step_grad = Gradients::zeros_like(m);
            double step_loss = 0.0;
            std::size_t micro_count = 0;
            for (std::size_t a = 0; a < cfg.grad_accumulation && cursor < samples.size(); ++a) {
                const std::size_t n = std::min(cfg.batch_size, samples.size() - cursor);
                const auto eff = materialize_effective_weights(m);
                Gradients micro_grad = Gradients::zeros_like(m);
                double micro_loss = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const Sample s = samples[cursor + i];
                    const auto& doc = corpus.documents[s.doc];
                    const auto window = context_window(doc, s.pos, m.context);
                    forward_cached(m, eff, window, cache);
                    auto [loss, grad] = backward_ste(m, eff, cache, doc[s.pos]);
                    micro_loss += loss;
                    micro_grad.accumulate(grad);
                }
                micro_grad.scale_by(1.0f / static_cast<float>(n));
                step_grad.accumulate(micro_grad);
                step_loss += micro_loss / static_cast<double>(n);
                cursor += n;
                ++micro_count;
            }
            step_grad.scale_by(1.0f / static_cast<float>(micro_count));
            const double lr = cosine_lr(step_idx, total_steps, cfg.base_lr);
            sgd_step(m, step_grad, static_cast<float>(lr));
            ++step_idx;
            log.steps.push_back({step_idx, lr, step_loss / static_cast<double>(micro_count)});
        }
    }
    return log;
}

struct PerplexityStats {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation across documents
    std::size_t documents = 0;
};

/// Per-document perplexity exp(mean NLL), aggregated across documents.
inline PerplexityStats eval_perplexity(const TinyLM& m, const Corpus& corpus) {
    if (corpus.documents.empty()) throw std::invalid_argument("eval_perplexity: empty corpus");
    const auto eff = materialize_effective_weights(m);
    ForwardCache cache;
    std::vector<double> ppl;
    ppl.reserve(corpus.documents.size());
    for (const auto& doc : corpus.documents) {
        if (doc.empty()) throw std::invalid_argument("eval_perplexity: empty document");
        double nll = 0.0;
        for (std::size_t p = 0; p < doc.size(); ++p) {
            const auto window = context_window(doc, p, m.context);
            forward_cached(m, eff, window, cache);
            nll += softmax_cross_entropy(cache.logits(), doc[p]);
        }
        ppl.push_back(std::exp(nll / static_cast<double>(doc.size())));
    }
    PerplexityStats st;
    st.documents = ppl.size();
    for (double v : ppl) st.mean += v;
    st.mean /= static_cast<double>(ppl.size());
    if (ppl.size() > 1) {
        double ss = 0.0;
        for (double v : ppl) ss += (v - st.mean) * (v - st.mean);
        st.stddev = std::sqrt(ss / static_cast<double>(ppl.size() - 1));
    }
    return st;
}

/// Mean next-token cross-entropy over every position of every document.
inline double eval_mean_loss(const TinyLM& m, const Corpus& corpus) {
    if (corpus.documents.empty()) throw std::invalid_argument("eval_mean_loss: empty corpus");
    const auto eff = materialize_effective_weights(m);
    ForwardCache cache;
    double nll = 0.0;
    std::size_t count = 0;
    for (const auto& doc : corpus.documents) {
        for (std::size_t p = 0; p < doc.size(); ++p) {
            const auto window = context_window(doc, p, m.context);
            forward_cached(m, eff, window, cache);
            nll += softmax_cross_entropy(cache.logits(), doc[p]);
            ++count;
        }
    }
    if (count == 0) throw std::invalid_argument("eval_mean_loss: no positions");
    return nll / static_cast<double>(count);
}

}  // namespace ternkit
