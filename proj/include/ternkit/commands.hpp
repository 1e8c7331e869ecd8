#pragma once

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ternkit/corpus.hpp"
#include "ternkit/infer.hpp"
#include "ternkit/io.hpp"
#include "ternkit/kernels.hpp"
#include "ternkit/model_quantize.hpp"
#include "ternkit/train.hpp"

namespace ternkit::cli {

using nlohmann::json;

/// Worker count for parallel kernels: TERNKIT_THREADS when set, else 4.
inline std::size_t default_threads() {
    if (const char* env = std::getenv("TERNKIT_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) return static_cast<std::size_t>(v);
        } catch (...) {
        }
        throw std::invalid_argument("TERNKIT_THREADS must be a positive integer");
    }
    return 4;
}

/// Layer selection grammar: "interior" (default), or a comma list of 1-based
/// layer indices and ranges, e.g. "2,3" or "2-4". Every index must name an
/// interior layer.
inline std::vector<std::size_t> parse_layer_selection(const std::string& spec, const TinyLM& m) {
    if (spec == "interior") return interior_layer_indices(m);
    std::vector<std::size_t> out;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) throw std::invalid_argument("invalid layer spec: empty entry");
        std::size_t lo = 0, hi = 0;
        const auto dash = item.find('-');
        try {
            if (dash == std::string::npos) {
                lo = hi = std::stoul(item);
            } else {
                lo = std::stoul(item.substr(0, dash));
                hi = std::stoul(item.substr(dash + 1));
            }
        } catch (...) {
            throw std::invalid_argument("invalid layer spec entry: " + item);
        }
        if (lo == 0 || hi < lo) throw std::invalid_argument("invalid layer spec entry: " + item);
        for (std::size_t i = lo; i <= hi; ++i) {
            if (i > m.layers.size() || !m.is_interior(i - 1))
                throw std::invalid_argument("layer " + std::to_string(i) +
                                            " is not an interior layer");
            out.push_back(i - 1);
        }
    }
    if (out.empty()) throw std::invalid_argument("invalid layer spec: selects no layers");
    return out;
}

// ---------------------------------------------------------------------------
// quantize

struct QuantizeOptions {
    std::string input;
    std::string output;
    int iters = 10;
    std::string mode = "ternary";  // ternary | binary
    std::string layers = "interior";
};

inline json run_quantize(const QuantizeOptions& opt) {
    if (opt.iters < 0) throw std::invalid_argument("--iters must be >= 0");
    LayerMode mode;
    if (opt.mode == "ternary") mode = LayerMode::ternary;
    else if (opt.mode == "binary") mode = LayerMode::binary;
    else throw std::invalid_argument("--mode must be ternary or binary");

    const TinyLM m = load_model(opt.input);
    const auto selection = parse_layer_selection(opt.layers, m);
    const TinyLM q = quantize_model(m, opt.iters, mode, selection);

    json layers = json::array();
    double total_sq = 0.0;
    std::size_t total_n = 0;
    for (std::size_t idx : selection) {
        const LayerState& l = q.layers[idx];
        std::size_t zeros = 0;
        for (std::size_t i = 0; i < l.latent.size(); ++i)
            if (l.mode == LayerMode::ternary && tern(l.latent.flat()[i]) == 0) ++zeros;
        const double sp = static_cast<double>(zeros) / static_cast<double>(l.latent.size());
        const double err = layer_quantization_error(l, m.layers[idx].latent);
        total_sq += err * static_cast<double>(l.latent.size());
        total_n += l.latent.size();
        layers.push_back({{"layer", idx + 1},
                          {"rows", l.latent.rows()},
                          {"cols", l.latent.cols()},
                          {"sparsity", sp},
                          {"quantization_error", err}});
    }
    const std::size_t bytes = save_model(q, opt.output);
    return json{{"command", "quantize"},
                {"input", opt.input},
                {"output", opt.output},
                {"mode", opt.mode},
                {"iters", opt.iters},
                {"layers", layers},
                {"total_quantization_error",
                 total_n ? total_sq / static_cast<double>(total_n) : 0.0},
                {"bytes_written", bytes}};
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
    std::string model;
    std::string corpus;
    std::string output;
    std::string loss_log;  // defaults to output + ".loss.csv"
    TrainConfig config;
};

inline json run_train(const TrainOptions& opt) {
    TinyLM m = load_model(opt.model);
    const Corpus corpus = load_corpus(opt.corpus);
    const TrainLog log = train(m, corpus, opt.config);

    const std::string log_path = opt.loss_log.empty() ? opt.output + ".loss.csv" : opt.loss_log;
    {
        std::ofstream out(log_path, std::ios::binary | std::ios::trunc);
        if (!out) throw file_error("cannot open for writing: " + log_path);
        out << log.to_csv();
    }
    const std::size_t bytes = save_model(m, opt.output);

    json j{{"command", "train"},
           {"model", opt.model},
           {"corpus", opt.corpus},
           {"output", opt.output},
           {"loss_log", log_path},
           {"config",
            {{"base_lr", opt.config.base_lr},
             {"epochs", opt.config.epochs},
             {"batch_size", opt.config.batch_size},
             {"grad_accumulation", opt.config.grad_accumulation},
             {"activation_clip", opt.config.activation_clip},
             {"schedule", "cosine"},
             {"seed", opt.config.seed}}},
           {"steps", log.steps.size()},
           {"bytes_written", bytes}};
    if (!log.steps.empty()) {
        j["first_loss"] = log.steps.front().loss;
        j["final_loss"] = log.steps.back().loss;
    }
    return j;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
    std::string model;
    std::string corpus;
    long samples = -1;  // -1: whole corpus
    std::uint64_t seed = 0;
};

inline json run_eval(const EvalOptions& opt) {
    const TinyLM m = load_model(opt.model);
    const Corpus corpus = load_corpus(opt.corpus);
    const std::size_t total = corpus.documents.size();
    const std::size_t k = opt.samples < 0 ? total : static_cast<std::size_t>(opt.samples);
    if (k == 0) throw std::invalid_argument("--samples must be >= 1");
    if (k > total)
        throw std::invalid_argument("--samples " + std::to_string(k) + " exceeds corpus size " +
                                    std::to_string(total));

    // seeded sample without replacement (partial Fisher-Yates)
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(opt.seed);
    Corpus picked;
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> dist(i, total - 1);
        std::swap(order[i], order[dist(rng)]);
        picked.documents.push_back(corpus.documents[order[i]]);
    }
    const PerplexityStats st = eval_perplexity(m, picked);
    return json{{"command", "eval"},
                {"model", opt.model},
                {"corpus", opt.corpus},
                {"samples", k},
                {"seed", opt.seed},
                {"perplexity", {{"mean", st.mean}, {"std", st.stddev}}}};
}

// ---------------------------------------------------------------------------
// generate

struct GenerateOptions {
    std::string model;
    std::string prompt;
    std::size_t tokens = 50;
    std::string variant = "direct_ternary";
    std::size_t threads = 0;  // 0: default_threads()
    std::size_t runs = 1;
    std::uint64_t seed = 0;  // echoed; greedy decoding is deterministic
};

inline json run_generate(const GenerateOptions& opt) {
    if (opt.tokens < 1) throw std::invalid_argument("--tokens must be >= 1");
    if (opt.runs < 1) throw std::invalid_argument("--runs must be >= 1");
    const KernelVariant variant = kernel_variant_from_string(opt.variant);
    const std::size_t threads = opt.threads ? opt.threads : default_threads();

    const TinyLM m = load_model(opt.model);
    const std::size_t file_bytes = read_file_bytes(opt.model).size();
    GenerationEngine engine(m, variant, threads);
    const auto prompt_tokens = tokenize_bytes(opt.prompt);
    for (TokenId t : prompt_tokens)
        if (static_cast<std::size_t>(t) >= m.vocab_size)
            throw std::out_of_range("prompt byte " + std::to_string(t) + " outside vocabulary");

    GenerateResult first;
    std::vector<double> tps(opt.runs);
    for (std::size_t run = 0; run < opt.runs; ++run) {
        const auto t0 = std::chrono::steady_clock::now();
        GenerateResult res = generate(engine, prompt_tokens, opt.tokens);
        const auto t1 = std::chrono::steady_clock::now();
        const double secs = std::chrono::duration<double>(t1 - t0).count();
        tps[run] = secs > 0.0 ? static_cast<double>(opt.tokens) / secs : 0.0;
        if (run == 0) first = std::move(res);
    }
    double mean = 0.0;
    for (double v : tps) mean += v;
    mean /= static_cast<double>(tps.size());
    double std_dev = 0.0;
    if (tps.size() > 1) {
        double ss = 0.0;
        for (double v : tps) ss += (v - mean) * (v - mean);
        std_dev = std::sqrt(ss / static_cast<double>(tps.size() - 1));
    }

    return json{{"command", "generate"},
                {"variant", opt.variant},
                {"config",
                 {{"threads", threads},
                  {"tokens", opt.tokens},
                  {"runs", opt.runs},
                  {"seed", opt.seed},
                  {"prompt", opt.prompt}}},
                {"text", detokenize_bytes(first.tokens)},
                {"token_ids", first.tokens},
                {"tie_at_tolerance", first.tie_at_tolerance},
                {"tokens_per_second", {{"mean", mean}, {"std", std_dev}}},
                {"peak_workspace_bytes", engine.peak_workspace_bytes()},
                {"model_bytes", engine.model_bytes()},
                {"file_size_bytes", file_bytes},
                {"run_count", opt.runs}};
}

// ---------------------------------------------------------------------------
// bench-matmul

struct BenchOptions {
    std::size_t rows = 1024;
    std::size_t cols = 1024;
    std::size_t batch = 1;
    std::string variant = "direct_ternary";
    std::size_t threads = 0;  // 0: default_threads()
    std::size_t reps = 10;
    std::uint64_t seed = 0;
};

/// Seeded random packed matrix: codes are 0 with probability 1/2 and +/-1
/// with probability 1/4 each, scales uniform in [0.25, 2).
inline PackedTernaryMatrix random_packed(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    std::vector<TernaryCode> codes(rows * cols);
    std::uniform_int_distribution<int> pick(0, 3);
    for (auto& c : codes) {
        const int v = pick(rng);
        c = v == 0 ? TernaryCode{1} : (v == 1 ? TernaryCode{-1} : TernaryCode{0});
    }
    std::vector<float> scales(rows);
    std::uniform_real_distribution<float> sdist(0.25f, 2.0f);
    for (auto& s : scales) s = sdist(rng);
    return pack_matrix(rows, cols, codes, scales);
}

inline json run_bench_matmul(const BenchOptions& opt) {
    if (opt.rows < 1 || opt.cols < 1 || opt.batch < 1)
        throw std::invalid_argument("--rows/--cols/--batch must be >= 1");
    if (opt.reps < 1) throw std::invalid_argument("--reps must be >= 1");
    const KernelVariant variant = kernel_variant_from_string(opt.variant);
    const std::size_t threads = opt.threads ? opt.threads : default_threads();

    std::mt19937_64 rng(opt.seed);
    const PackedTernaryMatrix p = random_packed(opt.rows, opt.cols, rng);
    DenseMatrix X(opt.cols, opt.batch);
    std::uniform_real_distribution<float> xdist(-1.0f, 1.0f);
    for (std::size_t i = 0; i < X.size(); ++i) X.data()[i] = xdist(rng);

    std::vector<double> samples(opt.reps);
    std::size_t peak = 0;
    for (std::size_t i = 0; i < opt.reps; ++i) {
        const ThroughputResult r = measure_throughput(p, X, variant, threads, 1);
        samples[i] = r.ops_per_second;
        peak = std::max(peak, r.peak_workspace_bytes);
    }
    double mean = 0.0;
    for (double v : samples) mean += v;
    mean /= static_cast<double>(samples.size());
    double std_dev = 0.0;
    if (samples.size() > 1) {
        double ss = 0.0;
        for (double v : samples) ss += (v - mean) * (v - mean);
        std_dev = std::sqrt(ss / static_cast<double>(samples.size() - 1));
    }

    return json{{"command", "bench-matmul"},
                {"variant", opt.variant},
                {"config",
                 {{"rows", opt.rows},
                  {"cols", opt.cols},
                  {"batch", opt.batch},
                  {"threads", threads},
                  {"reps", opt.reps},
                  {"seed", opt.seed}}},
                {"ops_per_second", {{"mean", mean}, {"std", std_dev}}},
                {"peak_workspace_bytes", peak},
                {"model_bytes", p.storage_bytes()},
                {"run_count", opt.reps}};
}

// ---------------------------------------------------------------------------
// inspect

struct InspectOptions {
    std::string file;
    bool as_json = false;
};

inline json run_inspect(const InspectOptions& opt) {
    const auto records = load_records(opt.file);
    const FileSizeReport rep = file_size_report(opt.file);

    json recs = json::array();
    for (std::size_t i = 0; i < records.size(); ++i) {
        const LayerRecord& r = records[i];
        json entry{{"index", i},
                   {"rows", r.rows},
                   {"cols", r.cols},
                   {"bytes", r.payload.size() + io_detail::kRecordHeaderBytes}};
        switch (r.kind) {
            case RecordKind::dense: entry["kind"] = "dense"; break;
            case RecordKind::int8: {
                entry["kind"] = "int8";
                entry["scale"] = int8_from_record(r).scale;
                break;
            }
            case RecordKind::ternary: {
                entry["kind"] = "ternary";
                const PackedTernaryMatrix p = ternary_from_record(r);
                entry["sparsity"] = sparsity(p);
                float mn = p.scale(0), mx = p.scale(0);
                double sum = 0.0;
                for (float s : p.scales()) {
                    mn = std::min(mn, s);
                    mx = std::max(mx, s);
                    sum += s;
                }
                entry["scale_min"] = mn;
                entry["scale_max"] = mx;
                entry["scale_mean"] = sum / static_cast<double>(p.rows());
                break;
            }
            case RecordKind::metadata: entry["kind"] = "metadata"; break;
        }
        recs.push_back(std::move(entry));
    }
    return json{{"command", "inspect"},
                {"file", opt.file},
                {"file_size_bytes", rep.total_bytes},
                {"breakdown",
                 {{"ternary_code_bytes", rep.ternary_code_bytes},
                  {"ternary_scale_bytes", rep.ternary_scale_bytes},
                  {"int8_bytes", rep.int8_bytes},
                  {"dense_bytes", rep.dense_bytes},
                  {"metadata_bytes", rep.metadata_bytes}}},
                {"records", recs}};
}

inline std::string render_inspect_table(const json& report) {
    std::ostringstream out;
    out << "file: " << report.at("file").get<std::string>() << "  ("
        << report.at("file_size_bytes").get<std::size_t>() << " bytes)\n";
    out << "idx  kind      rows    cols    bytes      detail\n";
    for (const auto& r : report.at("records")) {
        char line[160];
        std::string detail;
        if (r.contains("sparsity")) {
            char buf[96];
            std::snprintf(buf, sizeof(buf), "sparsity=%.4f scale=[%.4g..%.4g]",
                          r.at("sparsity").get<double>(), r.at("scale_min").get<double>(),
                          r.at("scale_max").get<double>());
            detail = buf;
        } else if (r.contains("scale")) {
            char buf[48];
            std::snprintf(buf, sizeof(buf), "scale=%.6g", r.at("scale").get<double>());
            detail = buf;
        }
        std::snprintf(line, sizeof(line), "%-4zu %-9s %-7zu %-7zu %-10zu %s\n",
                      r.at("index").get<std::size_t>(), r.at("kind").get<std::string>().c_str(),
                      r.at("rows").get<std::size_t>(), r.at("cols").get<std::size_t>(),
                      r.at("bytes").get<std::size_t>(), detail.c_str());
        out << line;
    }
    const auto& b = report.at("breakdown");
    out << "breakdown: ternary_codes=" << b.at("ternary_code_bytes").get<std::size_t>()
        << " ternary_scales=" << b.at("ternary_scale_bytes").get<std::size_t>()
        << " int8=" << b.at("int8_bytes").get<std::size_t>()
        << " dense=" << b.at("dense_bytes").get<std::size_t>()
        << " metadata=" << b.at("metadata_bytes").get<std::size_t>() << "\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// init (utility: the other commands need an existing model file)

struct InitOptions {
    std::string output;
    std::size_t vocab = 256;
    std::size_t context = 8;
    std::size_t embed_dim = 16;
    std::vector<std::size_t> hidden{64, 64, 64};
    std::uint64_t seed = 0;
};

inline json run_init(const InitOptions& opt) {
    const TinyLM m = TinyLM::create(opt.vocab, opt.context, opt.embed_dim, opt.hidden, opt.seed);
    const std::size_t bytes = save_model(m, opt.output);
    return json{{"command", "init"},
                {"output", opt.output},
                {"vocab", opt.vocab},
                {"context", opt.context},
                {"embed_dim", opt.embed_dim},
                {"hidden", opt.hidden},
                {"seed", opt.seed},
                {"bytes_written", bytes}};
}

}  // namespace ternkit::cli
