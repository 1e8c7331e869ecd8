#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <random>

#include "ternkit/io.hpp"
#include "ternkit/model_quantize.hpp"
#include "test_util.hpp"

using namespace ternkit;

namespace {

std::vector<std::uint8_t> slurp(const std::string& path) { return read_file_bytes(path); }

void spit(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

bool models_identical(const TinyLM& a, const TinyLM& b) {
    if (a.vocab_size != b.vocab_size || a.context != b.context || a.embed_dim != b.embed_dim ||
        a.activation_clip != b.activation_clip || !(a.embedding == b.embedding) ||
        a.layers.size() != b.layers.size())
        return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        const auto& x = a.layers[i];
        const auto& y = b.layers[i];
        if (!(x.latent == y.latent) || x.scale != y.scale || x.bias != y.bias ||
            x.mode != y.mode || x.storage != y.storage)
            return false;
    }
    return true;
}

TinyLM mixed_model(std::uint64_t seed) {
    TinyLM m = TinyLM::create(32, 4, 8, {12, 12, 12}, seed);
    return quantize_model(m, 10, LayerMode::ternary, interior_layer_indices(m));
}

}  // namespace

TEST_CASE("container layout arithmetic", "[io]") {
    testutil::TempDir tmp;
    SECTION("1x4 ternary record has a 5 byte payload") {
        const auto p = pack_matrix(1, 4, std::vector<TernaryCode>{0, 1, -1, 0},
                                   std::vector<float>{0.85f});
        const LayerRecord rec = record_from_ternary(p);
        CHECK(rec.payload.size() == 5);
        std::vector<LayerRecord> records{rec};
        const std::size_t written = save_records(records, tmp.file("one.tq2f"));
        CHECK(written == 12 + 16 + 5);
        CHECK(slurp(tmp.file("one.tq2f")).size() == written);
    }
    SECTION("empty record list is a bare header") {
        const std::size_t written = save_records({}, tmp.file("empty.tq2f"));
        CHECK(written == 12);
        CHECK(load_records(tmp.file("empty.tq2f")).empty());
    }
    SECTION("saving twice is byte-identical") {
        const TinyLM m = mixed_model(1);
        save_model(m, tmp.file("a.tq2f"));
        save_model(m, tmp.file("b.tq2f"));
        CHECK(slurp(tmp.file("a.tq2f")) == slurp(tmp.file("b.tq2f")));
    }
}

TEST_CASE("model round trip is exact", "[io]") {
    testutil::TempDir tmp;
    const TinyLM fresh = mixed_model(2);
    save_model(fresh, tmp.file("m1.tq2f"));

    // one hop normalizes storage (int8 weights become their dequantized
    // values, ternary latents become codes); after that the file is a fixed
    // point of save/load
    const TinyLM m1 = load_model(tmp.file("m1.tq2f"));
    save_model(m1, tmp.file("m2.tq2f"));
    const TinyLM m2 = load_model(tmp.file("m2.tq2f"));
    CHECK(models_identical(m1, m2));
    save_model(m2, tmp.file("m3.tq2f"));
    CHECK(slurp(tmp.file("m2.tq2f")) == slurp(tmp.file("m3.tq2f")));

    // quantized layers carry their exact codes and scales through the file
    const auto& before = fresh.layers[1];
    const auto& after = m1.layers[1];
    REQUIRE(after.mode == LayerMode::ternary);
    CHECK(after.scale == before.scale);
    for (std::size_t i = 0; i < before.latent.size(); ++i)
        CHECK(after.latent.flat()[i] == static_cast<float>(tern(before.latent.flat()[i])));
    // biases are stored verbatim
    for (std::size_t li = 0; li < fresh.layers.size(); ++li)
        CHECK(m1.layers[li].bias == fresh.layers[li].bias);
}

TEST_CASE("full-precision dense model round trips bitwise", "[io]") {
    testutil::TempDir tmp;
    const TinyLM m = TinyLM::create(24, 3, 8, {10, 10}, 3);
    save_model(m, tmp.file("fp.tq2f"));
    const TinyLM re = load_model(tmp.file("fp.tq2f"));
    CHECK(models_identical(m, re));
}

TEST_CASE("load rejects malformed files", "[io]") {
    testutil::TempDir tmp;
    const TinyLM m = mixed_model(4);
    const std::string path = tmp.file("model.tq2f");
    save_model(m, path);
    const auto good = slurp(path);

    SECTION("bad magic") {
        auto bytes = good;
        bytes[0] = 'X';
        spit(path, bytes);
        CHECK_THROWS_AS(load_model(path), format_error);
        CHECK_THROWS_WITH(load_model(path), Catch::Matchers::ContainsSubstring("magic"));
    }
    SECTION("unsupported version") {
        auto bytes = good;
        bytes[4] = 2;
        spit(path, bytes);
        CHECK_THROWS_WITH(load_model(path), Catch::Matchers::ContainsSubstring("version"));
    }
    SECTION("truncated payload") {
        auto bytes = good;
        bytes.resize(bytes.size() - 7);
        spit(path, bytes);
        CHECK_THROWS_AS(load_model(path), format_error);
    }
    SECTION("trailing garbage") {
        auto bytes = good;
        bytes.push_back(0);
        spit(path, bytes);
        CHECK_THROWS_WITH(load_model(path), Catch::Matchers::ContainsSubstring("trailing"));
    }
    SECTION("invalid ternary code") {
        // find the ternary record and plant a 0b10 lane in its first byte
        auto bytes = good;
        std::size_t pos = 12;
        bool planted = false;
        while (pos + 16 <= bytes.size() && !planted) {
            const std::uint32_t kind = bytes[pos];
            const std::uint32_t plen = static_cast<std::uint32_t>(bytes[pos + 12]) |
                                       static_cast<std::uint32_t>(bytes[pos + 13]) << 8 |
                                       static_cast<std::uint32_t>(bytes[pos + 14]) << 16 |
                                       static_cast<std::uint32_t>(bytes[pos + 15]) << 24;
            if (kind == 2) {
                bytes[pos + 16] = 0b00000010;
                planted = true;
            }
            pos += 16 + plen;
        }
        REQUIRE(planted);
        spit(path, bytes);
        CHECK_THROWS_AS(load_model(path), corrupt_data_error);
    }
    SECTION("missing file") {
        CHECK_THROWS_AS(load_model(tmp.file("nope.tq2f")), file_error);
    }
}

TEST_CASE("fuzzed corruption always raises a typed error", "[io]") {
    testutil::TempDir tmp;
    const TinyLM m = mixed_model(5);
    const std::string path = tmp.file("fuzz.tq2f");
    save_model(m, path);
    const auto good = slurp(path);

    std::mt19937_64 rng(99);
    int rejected = 0;
    for (int it = 0; it < 300; ++it) {
        auto bytes = good;
        if (it % 3 == 0) {
            bytes.resize(rng() % bytes.size());
        } else if (it % 3 == 1) {
            bytes[rng() % bytes.size()] ^= static_cast<std::uint8_t>(1 + rng() % 255);
        } else {
            const std::size_t cut = rng() % bytes.size();
            bytes.insert(bytes.begin() + static_cast<std::ptrdiff_t>(cut),
                         static_cast<std::uint8_t>(rng() % 256));
        }
        spit(path, bytes);
        try {
            (void)load_model(path);  // benign mutations may still parse
        } catch (const format_error&) {
            ++rejected;
        } catch (const corrupt_data_error&) {
            ++rejected;
        } catch (const file_error&) {
            ++rejected;
        }
    }
    CHECK(rejected > 0);
}

TEST_CASE("file_size_report attributes every byte", "[io]") {
    testutil::TempDir tmp;
    SECTION("mixed model sums to the file size") {
        const TinyLM m = mixed_model(6);
        const std::string path = tmp.file("mix.tq2f");
        const std::size_t written = save_model(m, path);
        const FileSizeReport rep = file_size_report(path);
        CHECK(rep.total_bytes == written);
        CHECK(rep.ternary_code_bytes + rep.ternary_scale_bytes + rep.int8_bytes +
                  rep.dense_bytes + rep.metadata_bytes ==
              rep.total_bytes);
        CHECK(rep.ternary_code_bytes > 0);
        CHECK(rep.int8_bytes > 0);
    }
    SECTION("all-dense model has zero ternary bytes") {
        const TinyLM m = TinyLM::create(16, 2, 4, {8}, 7);
        const std::string path = tmp.file("dense.tq2f");
        save_model(m, path);
        const FileSizeReport rep = file_size_report(path);
        CHECK(rep.ternary_code_bytes == 0);
        CHECK(rep.ternary_scale_bytes == 0);
        CHECK(rep.int8_bytes == 0);
    }
    SECTION("ternary layer byte counts follow the layout formula") {
        std::mt19937_64 rng(8);
        const auto p = pack_matrix(64, 250, testutil::random_codes(rng, 64 * 250),
                                   testutil::random_scales(rng, 64));
        std::vector<LayerRecord> records{record_from_ternary(p)};
        const std::string path = tmp.file("tern.tq2f");
        save_records(records, path);
        const FileSizeReport rep = file_size_report(path);
        CHECK(rep.ternary_code_bytes == 64 * 63);
        CHECK(rep.ternary_scale_bytes == 64 * 4);
    }
}
