#pragma once

/** \file corpus.hpp
 *  \brief Unified multi-modal document format, quality filters and token statistics.
 *
 * A corpus file is JSONL with one document per line and exactly the fields
 * {id, domain, texts, images, queries}. Loading never silently drops a line:
 * schema failures are collected as rejects and can be written to a sidecar.
 */

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "docmmir/tokenizer.hpp"

namespace docmmir::corpus {

enum class Domain { wiki, arxiv, slide };
enum class Split { train, valid, test };

inline constexpr std::array<Domain, 3> kDomains{Domain::wiki, Domain::arxiv, Domain::slide};

std::string_view to_string(Domain d);
std::string_view to_string(Split s);
std::optional<Domain> parse_domain(std::string_view s);
std::optional<Split> parse_split(std::string_view s);

struct Document {
    std::string id;
    Domain domain = Domain::wiki;
    std::vector<std::string> texts;   ///< one entry per paragraph / text block
    std::vector<std::string> images;  ///< relative image references
    std::vector<std::string> queries;

    bool operator==(const Document&) const = default;
};

/// A line that could not become a Document, or a document that failed filtering.
struct Reject {
    std::string id;      ///< empty when the line had no readable id
    std::string rule;    ///< "schema", "images", "tokens", "garbled", "judge"
    std::string detail;
};

struct Corpus {
    Split split = Split::train;
    std::vector<Document> docs;
    std::vector<Reject> rejects;
    std::vector<std::string> warnings;
};

struct LoadOptions {
    bool strict = false;  ///< unknown fields reject the line instead of warning
};

/// Parses a corpus file in file order.
/// Throws IoError if unreadable and DataError on a duplicate id.
Corpus load_corpus(const std::string& path, Split expected_split, LoadOptions options = {});

/// Same as load_corpus, from in-memory JSONL.
Corpus parse_corpus(std::string_view jsonl, Split expected_split, LoadOptions options = {});

/// Canonical single-line JSON (fixed field order, no trailing newline).
std::string to_json_line(const Document& doc);
std::string to_jsonl(std::span<const Document> docs);

nlohmann::ordered_json reject_to_json(const Reject& r);
std::string rejects_to_jsonl(std::span<const Reject> rejects);

struct FilterPolicy {
    std::size_t min_tokens = 300;      ///< accept only if token count is strictly greater
    std::size_t min_images = 1;
    std::size_t garbled_min_run = 10;
    double garbled_doc_fraction = 0.5;
    bool strip_math = false;

    /// Built-in policy: math stripping is enabled for arXiv only.
    static FilterPolicy defaults_for(Domain domain);

    /// Throws ArgumentError if the fields are out of range.
    void validate() const;
};

/// Per-domain policies. Missing keys in a JSON policy file keep their defaults.
struct PolicySet {
    std::array<FilterPolicy, 3> by_domain{FilterPolicy::defaults_for(Domain::wiki),
                                          FilterPolicy::defaults_for(Domain::arxiv),
                                          FilterPolicy::defaults_for(Domain::slide)};

    const FilterPolicy& for_domain(Domain d) const { return by_domain[static_cast<std::size_t>(d)]; }

    /// Accepts either one flat policy object (applied to every domain, with
    /// strip_math defaulting per domain) or {"wiki": {...}, "arxiv": {...}, "slide": {...}}.
    static PolicySet from_json(const nlohmann::json& j);
    nlohmann::ordered_json to_json() const;
};

struct StripResult {
    std::string text;
    std::vector<std::string> warnings;
};

/// Removes $$...$$, $...$ and \begin{equation}...\end{equation} spans (non-greedy,
/// non-nested). An unmatched opening delimiter leaves the remainder untouched
/// and adds a warning. Repeats until a fixed point, so the result is idempotent.
StripResult strip_math(std::string_view text);

/// True if the text still contains LaTeX markup: an environment marker, a
/// $...$ span, or a backslash command followed by a brace.
bool has_latex_artifact(std::string_view text);

/// A run of at least garbled_min_run code points that are neither word
/// characters nor whitespace, or residual LaTeX markup.
bool is_garbled(std::string_view paragraph, const FilterPolicy& policy);

/// Longest run of non-word, non-whitespace code points.
std::size_t longest_special_run(std::string_view paragraph);

struct Verdict {
    bool accepted = true;
    std::string rule;    ///< first failing rule when rejected
    std::string detail;

    static Verdict accept() { return {}; }
    static Verdict reject(std::string rule, std::string detail) { return {false, std::move(rule), std::move(detail)}; }
};

/// Applies math stripping (when the policy asks for it) to every text block.
Document clean_document(const Document& doc, const FilterPolicy& policy, std::vector<std::string>* warnings = nullptr);

/// Checks images, then tokens, then garbledness, on the cleaned document.
Verdict filter_document(const Document& doc, const FilterPolicy& policy, const TokenizerHandle& tokenizer);

struct FilterResult {
    std::vector<Document> accepted;  ///< cleaned, in input order
    std::vector<Reject> rejects;     ///< in input order
    std::vector<std::string> warnings;
};

/// Filters documents on up to `threads` workers; output order equals input order.
FilterResult filter_corpus(std::span<const Document> docs, const PolicySet& policies,
                           const TokenizerHandle& tokenizer, unsigned threads = 1);

struct DomainStats {
    std::size_t train = 0;
    std::size_t valid = 0;
    std::size_t test = 0;
    std::size_t total = 0;
    double avg_images = 0.0;
    double avg_text_tokens = 0.0;
    double avg_query_tokens = 0.0;
    std::size_t queries = 0;
};

/// Rows indexed by Domain, plus the all-domain total.
struct CorpusStats {
    std::array<DomainStats, 3> by_domain{};
    DomainStats overall{};

    const DomainStats& domain(Domain d) const { return by_domain[static_cast<std::size_t>(d)]; }

    /// Table-shaped JSON: one row per statistic, one column per domain plus "total".
    nlohmann::ordered_json to_json() const;
};

/// Image, text-token and query-token averages over every document of every
/// split. Throws ArgumentError if no documents are given.
CorpusStats compute_stats(std::span<const Corpus> splits, const TokenizerHandle& tokenizer);
CorpusStats compute_stats(std::span<const Document> docs, const TokenizerHandle& tokenizer,
                          Split split = Split::train);

}  // namespace docmmir::corpus
