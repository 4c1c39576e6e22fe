#include "docmmir/tokenizer.hpp"

#include <openssl/evp.h>

#include <limits>
#include <sstream>

#include "docmmir/binary_io.hpp"
#include "docmmir/error.hpp"
#include "docmmir/unicode.hpp"

namespace docmmir {

namespace {

constexpr std::size_t kNoRank = std::numeric_limits<std::size_t>::max();

std::string base64_decode(std::string_view in) {
    if (in.empty() || in.size() % 4 != 0) throw DataError("bad base64 token: " + std::string(in));
    std::string out(in.size() / 4 * 3, '\0');
    const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(in.data()), static_cast<int>(in.size()));
    if (n < 0) throw DataError("bad base64 token: " + std::string(in));
    std::size_t pad = 0;
    if (in.back() == '=') ++pad;
    if (in.size() >= 2 && in[in.size() - 2] == '=') ++pad;
    out.resize(static_cast<std::size_t>(n) - pad);
    return out;
}

bool is_other(char32_t c) { return !unicode::is_space(c) && !unicode::is_letter(c) && !unicode::is_number(c); }
bool is_newline(char32_t c) { return c == U'\r' || c == U'\n'; }

char32_t lower_ascii(char32_t c) { return (c >= U'A' && c <= U'Z') ? c + 32 : c; }

// Length in code points of a contraction match at i, or 0.
std::size_t match_contraction(const std::vector<char32_t>& cps, std::size_t i) {
    if (cps[i] != U'\'' || i + 1 >= cps.size()) return 0;
    const char32_t a = lower_ascii(cps[i + 1]);
    if (a == U's' || a == U't' || a == U'm' || a == U'd') return 2;
    if (i + 2 < cps.size()) {
        const char32_t b = lower_ascii(cps[i + 2]);
        if ((a == U'r' && b == U'e') || (a == U'v' && b == U'e') || (a == U'l' && b == U'l')) return 3;
    }
    return 0;
}

// End index (exclusive) of the piece starting at i under the cl100k rules.
std::size_t next_piece_end(const std::vector<char32_t>& cps, std::size_t i) {
    const std::size_t n = cps.size();
    using unicode::is_letter;
    using unicode::is_number;
    using unicode::is_space;

    if (auto len = match_contraction(cps, i)) return i + len;

    // [^\r\n\p{L}\p{N}]?\p{L}+
    {
        std::size_t j = i;
        if (!is_newline(cps[j]) && !is_letter(cps[j]) && !is_number(cps[j]) && j + 1 < n && is_letter(cps[j + 1])) ++j;
        if (is_letter(cps[j])) {
            while (j < n && is_letter(cps[j])) ++j;
            return j;
        }
    }

    // \p{N}{1,3}
    if (is_number(cps[i])) {
        std::size_t j = i;
        while (j < n && j - i < 3 && is_number(cps[j])) ++j;
        return j;
    }

    // ' ?[^\s\p{L}\p{N}]+[\r\n]*'
    {
        std::size_t j = i;
        if (cps[j] == U' ' && j + 1 < n && is_other(cps[j + 1])) ++j;
        if (is_other(cps[j])) {
            while (j < n && is_other(cps[j])) ++j;
            while (j < n && is_newline(cps[j])) ++j;
            return j;
        }
    }

    // Remaining alternatives all start with whitespace.
    std::size_t run_end = i;
    while (run_end < n && is_space(cps[run_end])) ++run_end;

    // \s*[\r\n]+
    for (std::size_t p = run_end; p > i; --p) {
        if (is_newline(cps[p - 1])) return p;
    }
    // \s+(?!\S)
    if (run_end == n) return run_end;
    if (run_end - i >= 2) return run_end - 1;
    // \s+
    return run_end;
}

}  // namespace

std::size_t WhitespaceTokenizer::count(std::string_view text) const {
    std::size_t tokens = 0;
    bool in_token = false;
    for (char32_t c : unicode::decode(text)) {
        if (unicode::is_space(c)) {
            in_token = false;
        } else if (!in_token) {
            in_token = true;
            ++tokens;
        }
    }
    return tokens;
}

std::vector<std::string> pretokenize_cl100k(std::string_view text) {
    const auto cps = unicode::decode(text);
    std::vector<std::string> pieces;
    for (std::size_t i = 0; i < cps.size();) {
        const std::size_t end = next_piece_end(cps, i);
        std::string piece;
        for (std::size_t k = i; k < end; ++k) piece += unicode::encode(cps[k]);
        pieces.push_back(std::move(piece));
        i = end;
    }
    return pieces;
}

std::shared_ptr<BpeTokenizer> BpeTokenizer::from_file(const std::string& path) {
    return from_string(io::read_file(path), path);
}

std::shared_ptr<BpeTokenizer> BpeTokenizer::from_string(std::string_view ranks_text, std::string name) {
    std::shared_ptr<BpeTokenizer> tok(new BpeTokenizer());
    tok->name_ = std::move(name);
    std::istringstream in{std::string(ranks_text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string token;
        std::size_t rank = 0;
        if (!(fields >> token >> rank)) throw DataError("bad rank line " + std::to_string(lineno));
        tok->ranks_.emplace(base64_decode(token), rank);
    }
    if (tok->ranks_.empty()) throw DataError("empty BPE rank table");
    return tok;
}

void BpeTokenizer::encode_piece(std::string_view piece, std::vector<std::size_t>& out) const {
    if (auto it = ranks_.find(std::string(piece)); it != ranks_.end()) {
        out.push_back(it->second);
        return;
    }
    // Boundaries between parts; merge the adjacent pair with the lowest rank
    // (leftmost on ties) until no mergeable pair remains.
    std::vector<std::size_t> bounds(piece.size() + 1);
    for (std::size_t i = 0; i <= piece.size(); ++i) bounds[i] = i;
    auto pair_rank = [&](std::size_t k) {
        auto it = ranks_.find(std::string(piece.substr(bounds[k], bounds[k + 2] - bounds[k])));
        return it == ranks_.end() ? kNoRank : it->second;
    };
    while (bounds.size() > 2) {
        std::size_t best = kNoRank;
        std::size_t best_k = 0;
        for (std::size_t k = 0; k + 2 < bounds.size(); ++k) {
            const auto r = pair_rank(k);
            if (r < best) {
                best = r;
                best_k = k;
            }
        }
        if (best == kNoRank) break;
        bounds.erase(bounds.begin() + static_cast<std::ptrdiff_t>(best_k) + 1);
    }
    for (std::size_t k = 0; k + 1 < bounds.size(); ++k) {
        auto it = ranks_.find(std::string(piece.substr(bounds[k], bounds[k + 1] - bounds[k])));
        out.push_back(it == ranks_.end() ? kNoRank : it->second);
    }
}

std::vector<std::size_t> BpeTokenizer::encode(std::string_view text) const {
    std::vector<std::size_t> out;
    for (const auto& piece : pretokenize_cl100k(text)) encode_piece(piece, out);
    return out;
}

std::size_t BpeTokenizer::count(std::string_view text) const { return encode(text).size(); }

std::size_t count_tokens(std::string_view text, const TokenizerHandle& tokenizer) {
    if (!tokenizer) throw ArgumentError("tokenizer not loaded");
    return tokenizer->count(text);
}

TokenizerHandle load_tokenizer(const std::string& spec) {
    if (spec.empty() || spec == "whitespace") return std::make_shared<WhitespaceTokenizer>();
    return BpeTokenizer::from_file(spec);
}

}  // namespace docmmir
