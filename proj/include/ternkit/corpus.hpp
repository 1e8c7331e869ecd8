#pragma once

#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ternkit/errors.hpp"
#include "ternkit/model.hpp"

namespace ternkit {

/// Byte-level tokenization: one token per byte, so any UTF-8 text fits in a
/// 256-entry vocabulary.
inline std::vector<TokenId> tokenize_bytes(std::string_view text) {
    std::vector<TokenId> out;
    out.reserve(text.size());
    for (unsigned char ch : text) out.push_back(static_cast<TokenId>(ch));
    return out;
}

inline std::string detokenize_bytes(std::span<const TokenId> tokens) {
    std::string out;
    out.reserve(tokens.size());
    for (TokenId t : tokens) out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    return out;
}

/// Token documents, one per blank-line-separated block of the source text.
struct Corpus {
    std::vector<std::vector<TokenId>> documents;
};

/// Splits text into documents on blank lines; empty blocks are dropped.
inline Corpus corpus_from_text(std::string_view text) {
    Corpus corpus;
    std::string current;
    std::size_t i = 0;
    auto flush = [&]() {
        while (!current.empty() && current.back() == '\n') current.pop_back();
        if (!current.empty()) corpus.documents.push_back(tokenize_bytes(current));
        current.clear();
    };
    while (i < text.size()) {
        std::size_t nl = text.find('\n', i);
        if (nl == std::string_view::npos) nl = text.size();
        const std::string_view line = text.substr(i, nl - i);
        if (line.empty()) {
            flush();
        } else {
            current.append(line);
            current.push_back('\n');
        }
        i = nl + 1;
    }
    flush();
    return corpus;
}

inline Corpus load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw file_error("cannot open corpus file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return corpus_from_text(ss.str());
}

/// Context window ending just before `pos`, left-padded with token 0 so every
/// position of a document is a training/evaluation target.
inline std::vector<TokenId> context_window(std::span<const TokenId> doc, std::size_t pos,
                                           std::size_t context) {
    std::vector<TokenId> w(context, 0);
    for (std::size_t i = 0; i < context; ++i) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(pos) -
                                   static_cast<std::ptrdiff_t>(context - i);
        if (src >= 0) w[i] = doc[static_cast<std::size_t>(src)];
    }
    return w;
}

}  // namespace ternkit
