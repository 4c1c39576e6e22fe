#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace docmmir {

/// Counts tokens in text. Implementations are immutable after construction and
/// safe to share across threads.
class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    virtual std::size_t count(std::string_view text) const = 0;
    virtual std::string name() const = 0;
};

using TokenizerHandle = std::shared_ptr<const Tokenizer>;

/// One token per maximal run of non-whitespace code points.
class WhitespaceTokenizer final : public Tokenizer {
public:
    std::size_t count(std::string_view text) const override;
    std::string name() const override { return "whitespace"; }
};

/// Byte-level BPE over a tiktoken-style rank table (one "<base64 token> <rank>"
/// per line). Text is split with the cl100k pre-tokenization pattern before
/// merging. Bytes missing from the table count as one token each.
class BpeTokenizer final : public Tokenizer {
public:
    static std::shared_ptr<BpeTokenizer> from_file(const std::string& path);
    static std::shared_ptr<BpeTokenizer> from_string(std::string_view ranks_text, std::string name = "bpe");

    std::size_t count(std::string_view text) const override;
    std::string name() const override { return name_; }

    /// Token ranks for `text`; exposed for tests.
    std::vector<std::size_t> encode(std::string_view text) const;

    std::size_t vocab_size() const { return ranks_.size(); }

private:
    BpeTokenizer() = default;
    void encode_piece(std::string_view piece, std::vector<std::size_t>& out) const;

    std::unordered_map<std::string, std::size_t> ranks_;
    std::string name_;
};

/// Splits text with the cl100k pre-tokenization rules; returns UTF-8 pieces.
std::vector<std::string> pretokenize_cl100k(std::string_view text);

/// Throws ArgumentError("tokenizer not loaded") when the handle is empty.
std::size_t count_tokens(std::string_view text, const TokenizerHandle& tokenizer);

/// "whitespace" selects the fallback; anything else is a rank-table path.
TokenizerHandle load_tokenizer(const std::string& spec);

}  // namespace docmmir
