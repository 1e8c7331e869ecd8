// ternkit command line: quantize | train | eval | generate | bench-matmul |
// inspect | init. JSON reports go to stdout, logs and errors to stderr.

#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ternkit/commands.hpp"

namespace {

void print_report(const nlohmann::json& j) {
    std::cout << j.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ternary weight quantization, training and benchmarking toolkit"};
    app.require_subcommand(1);

    ternkit::cli::QuantizeOptions qopt;
    auto* quantize = app.add_subcommand("quantize", "ternarize or binarize interior layers");
    quantize->add_option("input", qopt.input, "input model file")->required();
    quantize->add_option("output", qopt.output, "output model file")->required();
    quantize->add_option("--iters", qopt.iters, "k-means iterations (default 10)");
    quantize->add_option("--mode", qopt.mode, "ternary|binary (default ternary)");
    quantize->add_option("--layers", qopt.layers,
                         "layer selection: 'interior' or 1-based list like 2,3 or 2-4");

    ternkit::cli::TrainOptions topt;
    auto* train = app.add_subcommand("train", "STE fine-tuning on a byte-level corpus");
    train->add_option("model", topt.model, "input model file")->required();
    train->add_option("corpus", topt.corpus, "corpus text file")->required();
    train->add_option("output", topt.output, "output model file")->required();
    train->add_option("--loss-log", topt.loss_log, "loss log path (default <output>.loss.csv)");
    train->add_option("--lr", topt.config.base_lr, "base learning rate (default 1e-3)");
    train->add_option("--epochs", topt.config.epochs, "epochs (default 2)");
    train->add_option("--batch-size", topt.config.batch_size, "micro-batch size (default 8)");
    train->add_option("--accum", topt.config.grad_accumulation,
                      "gradient accumulation steps (default 2)");
    train->add_option("--clip", topt.config.activation_clip, "activation clip (default 10)");
    train->add_option("--seed", topt.config.seed, "shuffle seed (default 0)");

    ternkit::cli::EvalOptions eopt;
    auto* eval = app.add_subcommand("eval", "perplexity over sampled corpus documents");
    eval->add_option("model", eopt.model, "model file")->required();
    eval->add_option("corpus", eopt.corpus, "corpus text file")->required();
    eval->add_option("--samples", eopt.samples, "documents to sample (default: whole corpus)");
    eval->add_option("--seed", eopt.seed, "sampling seed (default 0)");

    ternkit::cli::GenerateOptions gopt;
    auto* generate = app.add_subcommand("generate", "greedy token generation benchmark");
    generate->add_option("model", gopt.model, "model file")->required();
    generate->add_option("--prompt", gopt.prompt, "prompt text (default empty)");
    generate->add_option("--tokens", gopt.tokens, "tokens to generate (default 50)");
    generate->add_option("--variant", gopt.variant, "kernel variant (default direct_ternary)");
    generate->add_option("--threads", gopt.threads, "worker threads (default TERNKIT_THREADS or 4)");
    generate->add_option("--runs", gopt.runs, "timed runs (default 1)");
    generate->add_option("--seed", gopt.seed, "echoed into the report");

    ternkit::cli::BenchOptions bopt;
    auto* bench = app.add_subcommand("bench-matmul", "kernel throughput on a random matrix");
    bench->add_option("--rows", bopt.rows, "output rows (default 1024)");
    bench->add_option("--cols", bopt.cols, "input cols (default 1024)");
    bench->add_option("--batch", bopt.batch, "batch size (default 1)");
    bench->add_option("--variant", bopt.variant, "kernel variant (default direct_ternary)");
    bench->add_option("--threads", bopt.threads, "worker threads (default TERNKIT_THREADS or 4)");
    bench->add_option("--reps", bopt.reps, "timed repetitions (default 10)");
    bench->add_option("--seed", bopt.seed, "matrix seed (default 0)");

    ternkit::cli::InspectOptions iopt;
    auto* inspect = app.add_subcommand("inspect", "layer table and byte breakdown of a model file");
    inspect->add_option("file", iopt.file, "model file")->required();
    inspect->add_flag("--json", iopt.as_json, "emit JSON instead of the table");

    ternkit::cli::InitOptions init_opt;
    std::string hidden_spec = "64,64,64";
    auto* init = app.add_subcommand("init", "create a fresh full-precision model file");
    init->add_option("output", init_opt.output, "output model file")->required();
    init->add_option("--vocab", init_opt.vocab, "vocabulary size (default 256)");
    init->add_option("--context", init_opt.context, "context window (default 8)");
    init->add_option("--embed-dim", init_opt.embed_dim, "embedding width (default 16)");
    init->add_option("--hidden", hidden_spec, "hidden layer widths, e.g. 64,64,64");
    init->add_option("--seed", init_opt.seed, "init seed (default 0)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*quantize) {
            print_report(ternkit::cli::run_quantize(qopt));
        } else if (*train) {
            print_report(ternkit::cli::run_train(topt));
        } else if (*eval) {
            print_report(ternkit::cli::run_eval(eopt));
        } else if (*generate) {
            print_report(ternkit::cli::run_generate(gopt));
        } else if (*bench) {
            print_report(ternkit::cli::run_bench_matmul(bopt));
        } else if (*inspect) {
            const auto report = ternkit::cli::run_inspect(iopt);
            if (iopt.as_json)
                print_report(report);
            else
                std::cout << ternkit::cli::render_inspect_table(report);
        } else if (*init) {
            init_opt.hidden.clear();
            std::stringstream ss(hidden_spec);
            std::string item;
            while (std::getline(ss, item, ','))
                init_opt.hidden.push_back(std::stoul(item));
            print_report(ternkit::cli::run_init(init_opt));
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
