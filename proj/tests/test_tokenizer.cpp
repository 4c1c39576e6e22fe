#include <gtest/gtest.h>

#include <fstream>

#include <nlohmann/json.hpp>

#include "docmmir/error.hpp"
#include "docmmir/tokenizer.hpp"

using namespace docmmir;

namespace {

TokenizerHandle fixture_bpe() {
    static auto tok = BpeTokenizer::from_file(std::string(DOCMMIR_FIXTURES) + "/bpe/fixture.tiktoken");
    return tok;
}

}  // namespace

TEST(WhitespaceTokenizer, CountsRuns) {
    auto ws = std::make_shared<WhitespaceTokenizer>();
    EXPECT_EQ(count_tokens("", ws), 0u);
    EXPECT_EQ(count_tokens("alpha beta gamma", ws), 3u);
    EXPECT_EQ(count_tokens("  alpha\t\nbeta  ", ws), 2u);
    // U+3000 ideographic space separates tokens too.
    EXPECT_EQ(count_tokens("a　b", ws), 2u);
}

TEST(Tokenizer, EmptyHandleIsAnError) {
    EXPECT_THROW(count_tokens("x", TokenizerHandle{}), ArgumentError);
}

TEST(Pretokenize, FollowsCl100kSplitRules) {
    using V = std::vector<std::string>;
    EXPECT_EQ(pretokenize_cl100k("It's 2024!!"), (V{"It", "'s", " ", "202", "4", "!!"}));
    EXPECT_EQ(pretokenize_cl100k("a  b"), (V{"a", " ", " b"}));
    EXPECT_EQ(pretokenize_cl100k("x \n\n y"), (V{"x", " \n\n", " y"}));
    EXPECT_EQ(pretokenize_cl100k("end   "), (V{"end", "   "}));
    EXPECT_EQ(pretokenize_cl100k("(foo)"), (V{"(foo", ")"}));
}

// Reference ids produced by tiktoken on the same rank table
// (tests/oracles/bpe_reference.py).
TEST(BpeTokenizer, MatchesReferenceTokenization) {
    auto tok = std::static_pointer_cast<const BpeTokenizer>(fixture_bpe());
    EXPECT_EQ(tok->vocab_size(), 400u);

    EXPECT_EQ(tok->encode("The retrieval engine ranks every document against the query."),
              (std::vector<std::size_t>{296, 339, 342, 343, 346, 347, 356, 262, 309, 46}));
    EXPECT_EQ(tok->encode("It's 2024 and they've indexed 488,467 documents!!"),
              (std::vector<std::size_t>{73, 116, 335, 32, 50, 48, 50, 52, 279, 262, 121, 39, 332, 286, 100,
                                        101, 120, 263, 32, 52, 56, 56, 44, 52, 54, 55, 347, 115, 33, 33}));
    EXPECT_EQ(tok->encode("Émile's slides:\n\n  - figures\t& tables   \r\n(end)"),
              (std::vector<std::size_t>{195, 137, 325, 101, 335, 315, 58, 10, 10, 32, 32, 45, 370, 9,
                                        38, 257, 97, 98, 334, 32, 32, 32, 13, 10, 40, 260, 100, 41}));

    EXPECT_EQ(count_tokens("unseen words zyxw qqq 12345678 $E=mc^2$ ...", tok), 40u);
    EXPECT_EQ(count_tokens("", tok), 0u);
}

TEST(BpeTokenizer, DeterministicAndShareable) {
    auto tok = fixture_bpe();
    const std::string text = "Documents mix paragraphs, figures and slides.";
    const auto first = count_tokens(text, tok);
    for (int i = 0; i < 5; ++i) EXPECT_EQ(count_tokens(text, tok), first);
}

TEST(BpeTokenizer, RejectsMalformedTable) {
    EXPECT_THROW(BpeTokenizer::from_string("not-base64! 1\n"), DataError);
    EXPECT_THROW(BpeTokenizer::from_string(""), DataError);
}

TEST(BpeTokenizer, MatchesReferenceOnRandomMixedScriptStrings) {
    auto tok = std::static_pointer_cast<const BpeTokenizer>(fixture_bpe());
    std::ifstream in(std::string(DOCMMIR_FIXTURES) + "/bpe/reference_cases.jsonl");
    ASSERT_TRUE(in);
    std::string line;
    std::size_t cases = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        const auto text = j["text"].get<std::string>();
        EXPECT_EQ(tok->encode(text), j["ids"].get<std::vector<std::size_t>>()) << text;
        ++cases;
    }
    EXPECT_EQ(cases, 200u);
}
