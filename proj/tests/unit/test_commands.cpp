#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ternkit/commands.hpp"
#include "test_util.hpp"

using namespace ternkit;
using ternkit::cli::json;

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string sample_corpus() {
    std::string text;
    for (int d = 0; d < 8; ++d) {
        for (int r = 0; r < 6; ++r) text += d % 2 ? "the cat sat. " : "a dog ran. ";
        text += "\n\n";
    }
    return text;
}

struct RunResult {
    int exit_code;
    std::string out;
    std::string err;
};

RunResult run_cli(const std::string& args, const testutil::TempDir& tmp) {
    const std::string out_path = tmp.file("cli_stdout.txt");
    const std::string err_path = tmp.file("cli_stderr.txt");
    const std::string cmd =
        std::string(TERNKIT_BIN) + " " + args + " >" + out_path + " 2>" + err_path;
    const int rc = std::system(cmd.c_str());
    return {rc == -1 ? -1 : WEXITSTATUS(rc), read_text(out_path), read_text(err_path)};
}

}  // namespace

TEST_CASE("layer selection grammar", "[cli]") {
    const TinyLM m = TinyLM::create(32, 4, 8, {8, 8, 8}, 1);  // 4 layers, interior 2..3
    CHECK(cli::parse_layer_selection("interior", m) == std::vector<std::size_t>{1, 2});
    CHECK(cli::parse_layer_selection("2,3", m) == std::vector<std::size_t>{1, 2});
    CHECK(cli::parse_layer_selection("2-3", m) == std::vector<std::size_t>{1, 2});
    CHECK(cli::parse_layer_selection("3", m) == std::vector<std::size_t>{2});
    CHECK_THROWS_AS(cli::parse_layer_selection("1", m), std::invalid_argument);
    CHECK_THROWS_AS(cli::parse_layer_selection("4", m), std::invalid_argument);
    CHECK_THROWS_AS(cli::parse_layer_selection("0", m), std::invalid_argument);
    CHECK_THROWS_AS(cli::parse_layer_selection("junk", m), std::invalid_argument);
    CHECK_THROWS_AS(cli::parse_layer_selection("", m), std::invalid_argument);
}

TEST_CASE("quantize command", "[cli]") {
    testutil::TempDir tmp;
    const std::string base = tmp.file("base.tq2f");
    cli::InitOptions init;
    init.output = base;
    init.vocab = 64;
    init.context = 4;
    init.embed_dim = 8;
    init.hidden = {16, 16, 16};
    init.seed = 3;
    cli::run_init(init);

    SECTION("ternary quantization writes exactly two ternary records") {
        cli::QuantizeOptions opt;
        opt.input = base;
        opt.output = tmp.file("t.tq2f");
        const json rep = cli::run_quantize(opt);
        CHECK(rep.at("layers").size() == 2);
        std::size_t ternary_records = 0;
        for (const auto& rec : load_records(opt.output))
            if (rec.kind == RecordKind::ternary) ++ternary_records;
        CHECK(ternary_records == 2);
        for (const auto& l : rep.at("layers")) {
            const double sp = l.at("sparsity").get<double>();
            CHECK(sp >= 0.0);
            CHECK(sp <= 1.0);
        }
    }
    SECTION("more k-means iterations do not increase the total error") {
        cli::QuantizeOptions zero;
        zero.input = base;
        zero.output = tmp.file("i0.tq2f");
        zero.iters = 0;
        cli::QuantizeOptions ten;
        ten.input = base;
        ten.output = tmp.file("i10.tq2f");
        ten.iters = 10;
        const double e0 = cli::run_quantize(zero).at("total_quantization_error").get<double>();
        const double e10 = cli::run_quantize(ten).at("total_quantization_error").get<double>();
        CHECK(e10 <= e0);
    }
    SECTION("binary mode has zero sparsity") {
        cli::QuantizeOptions opt;
        opt.input = base;
        opt.output = tmp.file("b.tq2f");
        opt.mode = "binary";
        const json rep = cli::run_quantize(opt);
        for (const auto& l : rep.at("layers")) CHECK(l.at("sparsity").get<double>() == 0.0);
        const TinyLM q = load_model(opt.output);
        CHECK(q.layers[1].mode == LayerMode::binary);
    }
    SECTION("errors surface as exceptions") {
        cli::QuantizeOptions opt;
        opt.input = tmp.file("missing.tq2f");
        opt.output = tmp.file("x.tq2f");
        CHECK_THROWS_AS(cli::run_quantize(opt), file_error);
        opt.input = base;
        opt.mode = "both";
        CHECK_THROWS_AS(cli::run_quantize(opt), std::invalid_argument);
        opt.mode = "ternary";
        opt.layers = "1";
        CHECK_THROWS_AS(cli::run_quantize(opt), std::invalid_argument);
    }
}

TEST_CASE("train command", "[cli]") {
    testutil::TempDir tmp;
    const std::string base = tmp.file("base.tq2f");
    const std::string corpus = tmp.file("corpus.txt");
    write_text(corpus, sample_corpus());
    cli::InitOptions init;
    init.output = base;
    init.vocab = 256;
    init.context = 4;
    init.embed_dim = 8;
    init.hidden = {12, 12};
    cli::run_init(init);

    SECTION("zero epochs reproduce the input model") {
        cli::TrainOptions opt;
        opt.model = base;
        opt.corpus = corpus;
        opt.output = tmp.file("out.tq2f");
        opt.config.epochs = 0;
        const json rep = cli::run_train(opt);
        CHECK(rep.at("steps").get<std::size_t>() == 0);
        CHECK(read_text(base) == read_text(opt.output));
        CHECK(read_text(rep.at("loss_log").get<std::string>()).empty());
    }
    SECTION("defaults echo the training protocol") {
        cli::TrainOptions opt;
        opt.model = base;
        opt.corpus = corpus;
        opt.output = tmp.file("out.tq2f");
        opt.config.epochs = 1;  // keep the test quick; default epochs checked in TrainConfig
        const json rep = cli::run_train(opt);
        CHECK(rep.at("config").at("base_lr").get<double>() == Catch::Approx(1e-3));
        CHECK(rep.at("config").at("batch_size").get<std::size_t>() == 8);
        CHECK(rep.at("config").at("grad_accumulation").get<std::size_t>() == 2);
        CHECK(rep.at("config").at("schedule").get<std::string>() == "cosine");
        CHECK(TrainConfig{}.epochs == 2);
        CHECK(rep.at("steps").get<std::size_t>() > 0);
    }
    SECTION("fixed seed gives byte-identical loss logs") {
        cli::TrainOptions opt;
        opt.model = base;
        opt.corpus = corpus;
        opt.config.epochs = 1;
        opt.config.seed = 9;
        opt.output = tmp.file("o1.tq2f");
        opt.loss_log = tmp.file("l1.csv");
        cli::run_train(opt);
        opt.output = tmp.file("o2.tq2f");
        opt.loss_log = tmp.file("l2.csv");
        cli::run_train(opt);
        const std::string l1 = read_text(tmp.file("l1.csv"));
        CHECK_FALSE(l1.empty());
        CHECK(l1 == read_text(tmp.file("l2.csv")));
        CHECK(read_text(tmp.file("o1.tq2f")) == read_text(tmp.file("o2.tq2f")));
    }
}

TEST_CASE("eval command", "[cli]") {
    testutil::TempDir tmp;
    const std::string model = tmp.file("m.tq2f");
    // uniform-logit model over vocab 16
    TinyLM m = TinyLM::create(16, 4, 8, {8}, 4);
    for (auto& l : m.layers)
        for (std::size_t i = 0; i < l.latent.size(); ++i) l.latent.data()[i] = 0.0f;
    save_model(m, model);

    const std::string corpus = tmp.file("c.txt");
    {
        // tokens must stay below vocab 16: bytes 0x01..0x09
        std::string text;
        for (int d = 0; d < 5; ++d) {
            for (int i = 0; i < 12; ++i) text += static_cast<char>(1 + (d + i) % 9);
            text += "\n\n";
        }
        write_text(corpus, text);
    }

    cli::EvalOptions opt;
    opt.model = model;
    opt.corpus = corpus;
    const json rep = cli::run_eval(opt);
    CHECK(rep.at("samples").get<std::size_t>() == 5);
    CHECK_THAT(rep.at("perplexity").at("mean").get<double>(),
               Catch::Matchers::WithinRel(16.0, 1e-9));
    CHECK(rep.at("perplexity").at("std").get<double>() <= 1e-12);

    SECTION("sampling is seeded and bounded") {
        opt.samples = 3;
        opt.seed = 1;
        const json a = cli::run_eval(opt);
        const json b = cli::run_eval(opt);
        CHECK(a.at("perplexity") == b.at("perplexity"));
        opt.samples = 6;
        CHECK_THROWS_AS(cli::run_eval(opt), std::invalid_argument);
    }
}

TEST_CASE("generate command", "[cli]") {
    testutil::TempDir tmp;
    const std::string base = tmp.file("base.tq2f");
    cli::InitOptions init;
    init.output = base;
    init.vocab = 256;
    init.context = 4;
    init.embed_dim = 8;
    init.hidden = {12, 12, 12};
    init.seed = 5;
    cli::run_init(init);
    cli::QuantizeOptions qopt;
    qopt.input = base;
    qopt.output = tmp.file("t.tq2f");
    cli::run_quantize(qopt);

    cli::GenerateOptions opt;
    opt.model = qopt.output;
    opt.prompt = "hello";
    opt.threads = 2;

    SECTION("token count is exact") {
        opt.tokens = 1;
        const json rep = cli::run_generate(opt);
        CHECK(rep.at("token_ids").size() == 1);
        opt.tokens = 17;
        CHECK(cli::run_generate(opt).at("token_ids").size() == 17);
    }
    SECTION("greedy decoding is deterministic and variant-independent") {
        opt.tokens = 32;
        opt.variant = "direct_ternary";
        const json a = cli::run_generate(opt);
        const json b = cli::run_generate(opt);
        CHECK(a.at("token_ids") == b.at("token_ids"));
        opt.variant = "unpack_then_multiply";
        const json c = cli::run_generate(opt);
        CHECK(a.at("token_ids") == c.at("token_ids"));
        CHECK(a.at("text") == c.at("text"));
        // the direct kernel needs no dense scratch
        CHECK(a.at("peak_workspace_bytes").get<std::size_t>() <
              c.at("peak_workspace_bytes").get<std::size_t>());
        opt.variant = "direct_ternary_parallel";
        CHECK(cli::run_generate(opt).at("token_ids") == a.at("token_ids"));
        opt.variant = "reference_dense";
        CHECK(cli::run_generate(opt).at("token_ids") == a.at("token_ids"));
    }
    SECTION("report carries the benchmark fields") {
        opt.tokens = 8;
        opt.runs = 3;
        const json rep = cli::run_generate(opt);
        CHECK(rep.at("run_count").get<std::size_t>() == 3);
        CHECK(rep.at("tokens_per_second").at("mean").get<double>() > 0.0);
        CHECK(rep.at("config").at("threads").get<std::size_t>() == 2);
        CHECK(rep.at("file_size_bytes").get<std::size_t>() ==
              read_file_bytes(qopt.output).size());
        CHECK(rep.at("model_bytes").get<std::size_t>() > 0);
    }
}

TEST_CASE("bench-matmul command", "[cli]") {
    cli::BenchOptions opt;
    opt.rows = 64;
    opt.cols = 64;
    opt.batch = 2;
    opt.reps = 1;
    opt.threads = 2;
    const json rep = cli::run_bench_matmul(opt);
    CHECK(rep.at("run_count").get<std::size_t>() == 1);
    CHECK(rep.at("ops_per_second").at("std").get<double>() == 0.0);
    CHECK(rep.at("ops_per_second").at("mean").get<double>() > 0.0);
    CHECK(rep.at("config").at("rows").get<std::size_t>() == 64);
    CHECK(rep.at("config").at("cols").get<std::size_t>() == 64);
    CHECK(rep.at("config").at("threads").get<std::size_t>() == 2);

    SECTION("same seed builds the same matrix") {
        const json a = cli::run_bench_matmul(opt);
        const json b = cli::run_bench_matmul(opt);
        CHECK(a.at("model_bytes") == b.at("model_bytes"));
    }
}

TEST_CASE("inspect command", "[cli]") {
    testutil::TempDir tmp;
    const std::string base = tmp.file("base.tq2f");
    cli::InitOptions init;
    init.output = base;
    init.vocab = 64;
    init.context = 4;
    init.embed_dim = 8;
    init.hidden = {16, 16, 16};
    cli::run_init(init);
    cli::QuantizeOptions qopt;
    qopt.input = base;
    qopt.output = tmp.file("t.tq2f");
    cli::run_quantize(qopt);

    cli::InspectOptions opt;
    opt.file = qopt.output;
    const json rep = cli::run_inspect(opt);
    const auto& b = rep.at("breakdown");
    CHECK(b.at("ternary_code_bytes").get<std::size_t>() +
              b.at("ternary_scale_bytes").get<std::size_t>() +
              b.at("int8_bytes").get<std::size_t>() + b.at("dense_bytes").get<std::size_t>() +
              b.at("metadata_bytes").get<std::size_t>() ==
          rep.at("file_size_bytes").get<std::size_t>());
    bool saw_ternary = false;
    for (const auto& rec : rep.at("records")) {
        if (rec.at("kind") == "ternary") {
            saw_ternary = true;
            CHECK(rec.at("sparsity").get<double>() >= 0.0);
            CHECK(rec.at("sparsity").get<double>() <= 1.0);
        }
    }
    CHECK(saw_ternary);
    const std::string table = cli::render_inspect_table(rep);
    CHECK(table.find("ternary") != std::string::npos);
}

TEST_CASE("cli binary end to end", "[cli][subprocess]") {
    testutil::TempDir tmp;
    const std::string base = tmp.file("base.tq2f");
    const std::string quant = tmp.file("quant.tq2f");
    const std::string corpus = tmp.file("corpus.txt");
    write_text(corpus, sample_corpus());

    SECTION("pipeline: init, quantize, eval, generate, inspect") {
        CHECK(run_cli("init " + base + " --vocab 256 --context 4 --embed-dim 8 --hidden 12,12,12",
                      tmp)
                  .exit_code == 0);
        const auto q = run_cli("quantize " + base + " " + quant + " --iters 10", tmp);
        REQUIRE(q.exit_code == 0);
        const json qrep = json::parse(q.out);
        CHECK(qrep.at("command") == "quantize");

        const auto e = run_cli("eval " + quant + " " + corpus + " --samples 4 --seed 1", tmp);
        REQUIRE(e.exit_code == 0);
        CHECK(json::parse(e.out).at("perplexity").at("mean").get<double>() > 0.0);

        const auto g = run_cli("generate " + quant + " --prompt abc --tokens 5 --threads 2", tmp);
        REQUIRE(g.exit_code == 0);
        CHECK(json::parse(g.out).at("token_ids").size() == 5);

        const auto i = run_cli("inspect " + quant + " --json", tmp);
        REQUIRE(i.exit_code == 0);
        CHECK(json::parse(i.out).at("command") == "inspect");
        const auto t = run_cli("inspect " + quant, tmp);
        CHECK(t.out.find("breakdown") != std::string::npos);
    }
    SECTION("failures exit nonzero with a one-line error") {
        const auto r = run_cli("eval " + tmp.file("missing.tq2f") + " " + corpus, tmp);
        CHECK(r.exit_code == 1);
        CHECK(r.out.empty());
        CHECK(r.err.rfind("error:", 0) == 0);
        CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
    }
    SECTION("TERNKIT_THREADS env var sets the default worker count") {
        run_cli("init " + base + " --vocab 64 --context 2 --embed-dim 4 --hidden 8,8,8", tmp);
        const std::string out_path = tmp.file("env_out.txt");
        const std::string cmd = std::string("TERNKIT_THREADS=3 ") + TERNKIT_BIN + " bench-matmul" +
                                " --rows 16 --cols 16 --reps 1 >" + out_path + " 2>/dev/null";
        REQUIRE(std::system(cmd.c_str()) == 0);
        CHECK(json::parse(read_text(out_path)).at("config").at("threads").get<int>() == 3);
    }
}
