#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "ternkit/errors.hpp"
#include "ternkit/model.hpp"
#include "ternkit/quantize.hpp"

namespace ternkit {

// TQ2F container, version 1. All integers little-endian.
//
//   bytes 0..3   magic "TQ2F"
//   bytes 4..7   version u32 = 1
//   bytes 8..11  record count u32
//   records:     kind u32, rows u32, cols u32, payload_length u32, payload
//
// payloads by kind:
//   0 dense     rows*cols float32
//   1 int8      rows*cols int8, then one float32 scale
//   2 ternary   rows*ceil(cols/4) code bytes, then rows float32 scales
//   3 metadata  cols float32 values (rows = 1); at most one, always last

enum class RecordKind : std::uint32_t { dense = 0, int8 = 1, ternary = 2, metadata = 3 };

struct LayerRecord {
    RecordKind kind = RecordKind::dense;
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::vector<std::uint8_t> payload;
};

namespace io_detail {

constexpr char kMagic[4] = {'T', 'Q', '2', 'F'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kFileHeaderBytes = 12;
constexpr std::size_t kRecordHeaderBytes = 16;

struct ByteWriter {
    std::vector<std::uint8_t> bytes;
    void u32(std::uint32_t v) {
        bytes.push_back(static_cast<std::uint8_t>(v));
        bytes.push_back(static_cast<std::uint8_t>(v >> 8));
        bytes.push_back(static_cast<std::uint8_t>(v >> 16));
        bytes.push_back(static_cast<std::uint8_t>(v >> 24));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void raw(std::span<const std::uint8_t> s) { bytes.insert(bytes.end(), s.begin(), s.end()); }
};

struct ByteReader {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;

    void require(std::size_t n, const char* what) {
        if (pos + n > bytes.size())
            throw format_error(std::string("truncated file: expected ") + what);
    }
    std::uint32_t u32(const char* what) {
        require(4, what);
        const std::uint32_t v = static_cast<std::uint32_t>(bytes[pos]) |
                                static_cast<std::uint32_t>(bytes[pos + 1]) << 8 |
                                static_cast<std::uint32_t>(bytes[pos + 2]) << 16 |
                                static_cast<std::uint32_t>(bytes[pos + 3]) << 24;
        pos += 4;
        return v;
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
    std::span<const std::uint8_t> raw(std::size_t n, const char* what) {
        require(n, what);
        auto s = bytes.subspan(pos, n);
        pos += n;
        return s;
    }
};

inline std::size_t expected_payload(RecordKind kind, std::uint32_t rows, std::uint32_t cols) {
    const std::size_t r = rows, c = cols;
    switch (kind) {
        case RecordKind::dense: return r * c * 4;
        case RecordKind::int8: return r * c + 4;
        case RecordKind::ternary: return r * PackedTernaryMatrix::stride_for(c) + r * 4;
        case RecordKind::metadata: return c * 4;
    }
    throw format_error("unknown record kind");
}

inline float payload_f32(std::span<const std::uint8_t> p, std::size_t off) {
    const std::uint32_t v = static_cast<std::uint32_t>(p[off]) |
                            static_cast<std::uint32_t>(p[off + 1]) << 8 |
                            static_cast<std::uint32_t>(p[off + 2]) << 16 |
                            static_cast<std::uint32_t>(p[off + 3]) << 24;
    return std::bit_cast<float>(v);
}

}  // namespace io_detail

inline LayerRecord record_from_dense(const DenseMatrix& W) {
    LayerRecord rec;
    rec.kind = RecordKind::dense;
    rec.rows = static_cast<std::uint32_t>(W.rows());
    rec.cols = static_cast<std::uint32_t>(W.cols());
    io_detail::ByteWriter w;
    for (float v : W.flat()) w.f32(v);
    rec.payload = std::move(w.bytes);
    return rec;
}

inline DenseMatrix dense_from_record(const LayerRecord& rec) {
    std::vector<float> data(static_cast<std::size_t>(rec.rows) * rec.cols);
    for (std::size_t i = 0; i < data.size(); ++i)
        data[i] = io_detail::payload_f32(rec.payload, i * 4);
    try {
        return DenseMatrix(rec.rows, rec.cols, std::move(data));
    } catch (const std::invalid_argument& e) {
        throw format_error(std::string("bad dense record: ") + e.what());
    }
}

inline LayerRecord record_from_int8(const Int8Tensor& t) {
    LayerRecord rec;
    rec.kind = RecordKind::int8;
    rec.rows = static_cast<std::uint32_t>(t.rows);
    rec.cols = static_cast<std::uint32_t>(t.cols);
    io_detail::ByteWriter w;
    for (std::int8_t q : t.q) w.bytes.push_back(static_cast<std::uint8_t>(q));
    w.f32(t.scale);
    rec.payload = std::move(w.bytes);
    return rec;
}

inline Int8Tensor int8_from_record(const LayerRecord& rec) {
    Int8Tensor t;
    t.rows = rec.rows;
    t.cols = rec.cols;
    const std::size_t n = t.rows * t.cols;
    t.q.resize(n);
    for (std::size_t i = 0; i < n; ++i) t.q[i] = static_cast<std::int8_t>(rec.payload[i]);
    t.scale = io_detail::payload_f32(rec.payload, n);
    return t;
}

inline LayerRecord record_from_ternary(const PackedTernaryMatrix& p) {
    LayerRecord rec;
    rec.kind = RecordKind::ternary;
    rec.rows = static_cast<std::uint32_t>(p.rows());
    rec.cols = static_cast<std::uint32_t>(p.cols());
    io_detail::ByteWriter w;
    w.raw(p.bytes());
    for (float s : p.scales()) w.f32(s);
    rec.payload = std::move(w.bytes);
    return rec;
}

inline PackedTernaryMatrix ternary_from_record(const LayerRecord& rec) {
    const std::size_t code_bytes = rec.rows * PackedTernaryMatrix::stride_for(rec.cols);
    std::vector<std::uint8_t> data(rec.payload.begin(), rec.payload.begin() + code_bytes);
    std::vector<float> scales(rec.rows);
    for (std::size_t r = 0; r < rec.rows; ++r)
        scales[r] = io_detail::payload_f32(rec.payload, code_bytes + r * 4);
    try {
        return PackedTernaryMatrix(rec.rows, rec.cols, std::move(data), std::move(scales));
    } catch (const std::invalid_argument& e) {
        throw format_error(std::string("bad ternary record: ") + e.what());
    }
}

inline LayerRecord record_from_metadata(std::span<const float> values) {
    LayerRecord rec;
    rec.kind = RecordKind::metadata;
    rec.rows = 1;
    rec.cols = static_cast<std::uint32_t>(values.size());
    io_detail::ByteWriter w;
    for (float v : values) w.f32(v);
    rec.payload = std::move(w.bytes);
    return rec;
}

inline std::vector<float> metadata_from_record(const LayerRecord& rec) {
    std::vector<float> values(rec.cols);
    for (std::size_t i = 0; i < values.size(); ++i)
        values[i] = io_detail::payload_f32(rec.payload, i * 4);
    return values;
}

/// Serializes records to the container layout. Returns bytes written.
/// Byte-identical for identical inputs.
inline std::size_t save_records(std::span<const LayerRecord> records, const std::string& path) {
    io_detail::ByteWriter w;
    w.raw(std::span<const std::uint8_t>(
        reinterpret_cast<const std::uint8_t*>(io_detail::kMagic), 4));
    w.u32(io_detail::kVersion);
    w.u32(static_cast<std::uint32_t>(records.size()));
    for (const auto& rec : records) {
        if (rec.payload.size() != io_detail::expected_payload(rec.kind, rec.rows, rec.cols))
            throw std::invalid_argument("save_records: payload length inconsistent with kind/shape");
        w.u32(static_cast<std::uint32_t>(rec.kind));
        w.u32(rec.rows);
        w.u32(rec.cols);
        w.u32(static_cast<std::uint32_t>(rec.payload.size()));
        w.raw(rec.payload);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw file_error("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(w.bytes.data()),
              static_cast<std::streamsize>(w.bytes.size()));
    if (!out) throw file_error("write failed: " + path);
    return w.bytes.size();
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw file_error("cannot open: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

inline std::vector<LayerRecord> parse_records(std::span<const std::uint8_t> bytes) {
    io_detail::ByteReader r{bytes};
    const auto magic = r.raw(4, "magic");
    if (std::memcmp(magic.data(), io_detail::kMagic, 4) != 0)
        throw format_error("bad magic: not a TQ2F file");
    const std::uint32_t version = r.u32("version");
    if (version != io_detail::kVersion)
        throw format_error("unsupported version " + std::to_string(version));
    const std::uint32_t count = r.u32("record count");
    std::vector<LayerRecord> records;
    records.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        LayerRecord rec;
        const std::uint32_t kind = r.u32("record kind");
        if (kind > 3) throw format_error("unknown record kind " + std::to_string(kind));
        rec.kind = static_cast<RecordKind>(kind);
        rec.rows = r.u32("record rows");
        rec.cols = r.u32("record cols");
        const std::uint32_t plen = r.u32("payload length");
        if (plen != io_detail::expected_payload(rec.kind, rec.rows, rec.cols))
            throw format_error("payload length inconsistent with record shape");
        if (rec.kind == RecordKind::metadata && rec.rows != 1)
            throw format_error("metadata record must have rows = 1");
        const auto payload = r.raw(plen, "record payload");
        rec.payload.assign(payload.begin(), payload.end());
        records.push_back(std::move(rec));
    }
    if (r.pos != bytes.size()) throw format_error("trailing bytes after last record");
    return records;
}

inline std::vector<LayerRecord> load_records(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    return parse_records(bytes);
}

namespace io_detail {

inline std::uint32_t mode_code(LayerMode m) {
    switch (m) {
        case LayerMode::full_precision: return 0;
        case LayerMode::ternary: return 1;
        case LayerMode::binary: return 2;
    }
    return 0;
}

inline LayerMode mode_from_code(std::uint32_t v) {
    switch (v) {
        case 0: return LayerMode::full_precision;
        case 1: return LayerMode::ternary;
        case 2: return LayerMode::binary;
    }
    throw format_error("metadata: bad layer mode " + std::to_string(v));
}

inline PackedTernaryMatrix pack_layer_codes(const LayerState& l) {
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

}  // namespace io_detail

/// Saves a TinyLM: embedding record, then per layer a weights record and a
/// dense bias record, then the trailing metadata record. Quantized-mode
/// layers always serialize as packed ternary codes plus per-row scales.
inline std::size_t save_model(const TinyLM& m, const std::string& path) {
    m.validate();
    std::vector<LayerRecord> records;
    if (m.embedding_storage == StorageKind::int8)
        records.push_back(record_from_int8(int8_quantize(m.embedding)));
    else
        records.push_back(record_from_dense(m.embedding));

    for (const auto& l : m.layers) {
        if (l.mode != LayerMode::full_precision) {
            records.push_back(record_from_ternary(io_detail::pack_layer_codes(l)));
        } else if (l.storage == StorageKind::int8) {
            records.push_back(record_from_int8(int8_quantize(l.latent)));
        } else {
            records.push_back(record_from_dense(l.latent));
        }
        DenseMatrix bias(1, l.bias.size());
        for (std::size_t i = 0; i < l.bias.size(); ++i) bias.at(0, i) = l.bias[i];
        records.push_back(record_from_dense(bias));
    }

    std::vector<float> meta{static_cast<float>(m.vocab_size), static_cast<float>(m.context),
                            static_cast<float>(m.embed_dim),
                            static_cast<float>(m.layers.size()), m.activation_clip};
    for (const auto& l : m.layers)
        meta.push_back(static_cast<float>(io_detail::mode_code(l.mode)));
    records.push_back(record_from_metadata(meta));
    return save_records(records, path);
}

/// Loads a TinyLM saved by save_model. Latents of quantized layers are
/// reconstructed from their codes (the container stores codes, not latents).
inline TinyLM load_model(const std::string& path) {
    const auto records = parse_records(read_file_bytes(path));
    if (records.size() < 2 || records.back().kind != RecordKind::metadata)
        throw format_error("model file must end with a metadata record");
    const auto meta = metadata_from_record(records.back());
    if (meta.size() < 5) throw format_error("metadata record too short");
    const auto meta_count = [&](std::size_t i) -> std::size_t {
        const float v = meta[i];
        if (!std::isfinite(v) || v < 0.0f || v > 1e9f)
            throw format_error("metadata field " + std::to_string(i) + " out of range");
        return static_cast<std::size_t>(v);
    };

    TinyLM m;
    m.vocab_size = meta_count(0);
    m.context = meta_count(1);
    m.embed_dim = meta_count(2);
    const std::size_t n_layers = meta_count(3);
    m.activation_clip = meta[4];
    if (!std::isfinite(m.activation_clip)) throw format_error("metadata activation_clip invalid");
    if (meta.size() != 5 + n_layers) throw format_error("metadata length mismatch");
    if (records.size() != 2 + 2 * n_layers)
        throw format_error("record count inconsistent with metadata layer count");

    const LayerRecord& emb = records[0];
    if (emb.kind == RecordKind::int8) {
        m.embedding = int8_dequantize(int8_from_record(emb));
        m.embedding_storage = StorageKind::int8;
    } else if (emb.kind == RecordKind::dense) {
        m.embedding = dense_from_record(emb);
        m.embedding_storage = StorageKind::dense;
    } else {
        throw format_error("embedding record must be dense or int8");
    }

    for (std::size_t li = 0; li < n_layers; ++li) {
        const LayerRecord& wrec = records[1 + 2 * li];
        const LayerRecord& brec = records[2 + 2 * li];
        LayerState l;
        l.mode = io_detail::mode_from_code(static_cast<std::uint32_t>(meta_count(5 + li)));
        switch (wrec.kind) {
            case RecordKind::dense:
                if (l.mode != LayerMode::full_precision)
                    throw format_error("dense weights require full_precision mode");
                l.latent = dense_from_record(wrec);
                l.scale.assign(l.latent.rows(), 1.0f);
                l.storage = StorageKind::dense;
                break;
            case RecordKind::int8:
                if (l.mode != LayerMode::full_precision)
                    throw format_error("int8 weights require full_precision mode");
                l.latent = int8_dequantize(int8_from_record(wrec));
                l.scale.assign(l.latent.rows(), 1.0f);
                l.storage = StorageKind::int8;
                break;
            case RecordKind::ternary: {
                if (l.mode == LayerMode::full_precision)
                    throw format_error("ternary weights require a quantized mode");
                const PackedTernaryMatrix p = ternary_from_record(wrec);
                const auto u = unpack_matrix(p);
                l.latent = DenseMatrix(u.rows, u.cols);
                for (std::size_t i = 0; i < l.latent.size(); ++i)
                    l.latent.data()[i] = static_cast<float>(u.codes[i]);
                l.scale = u.scales;
                l.storage = StorageKind::ternary_packed;
                break;
            }
            case RecordKind::metadata:
                throw format_error("unexpected metadata record among layers");
        }
        if (brec.kind != RecordKind::dense || brec.rows != 1 || brec.cols != l.latent.rows())
            throw format_error("bias record shape mismatch at layer " + std::to_string(li));
        const DenseMatrix bias = dense_from_record(brec);
        l.bias.assign(bias.flat().begin(), bias.flat().end());
        m.layers.push_back(std::move(l));
    }

    try {
        m.validate();
    } catch (const std::invalid_argument& e) {
        throw format_error(std::string("inconsistent model: ") + e.what());
    }
    return m;
}

/// Byte attribution for a container file. Sums to the exact file size.
struct FileSizeReport {
    std::size_t total_bytes = 0;
    std::size_t ternary_code_bytes = 0;
    std::size_t ternary_scale_bytes = 0;
    std::size_t int8_bytes = 0;
    std::size_t dense_bytes = 0;
    std::size_t metadata_bytes = 0;  // file/record headers plus metadata payloads
};

inline FileSizeReport file_size_report(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    const auto records = parse_records(bytes);
    FileSizeReport rep;
    rep.total_bytes = bytes.size();
    rep.metadata_bytes = io_detail::kFileHeaderBytes;
    for (const auto& rec : records) {
        rep.metadata_bytes += io_detail::kRecordHeaderBytes;
        switch (rec.kind) {
            case RecordKind::dense: rep.dense_bytes += rec.payload.size(); break;
            case RecordKind::int8: rep.int8_bytes += rec.payload.size(); break;
            case RecordKind::ternary: {
                const std::size_t code = rec.rows * PackedTernaryMatrix::stride_for(rec.cols);
                rep.ternary_code_bytes += code;
                rep.ternary_scale_bytes += rec.payload.size() - code;
                break;
            }
            case RecordKind::metadata: rep.metadata_bytes += rec.payload.size(); break;
        }
    }
    return rep;
}

}  // namespace ternkit
