#pragma once

/** \file annotate.hpp
 *  \brief LLM client for query generation and language-quality judging.
 *
 * Prompts render to chat messages. A Transport sends them and returns the
 * reply text; HttpTransport speaks the OpenAI-compatible chat completions
 * protocol, and tests substitute scripted transports.
 *
 * Environment for HttpTransport::Config::from_env:
 *   DOCMMIR_LLM_ENDPOINT  full URL of the chat completions route (required)
 *   DOCMMIR_LLM_API_KEY   bearer token (optional)
 *   DOCMMIR_LLM_MODEL     model name (required)
 *   DOCMMIR_LLM_TIMEOUT   request timeout in seconds (default 60)
 */

#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "docmmir/corpus.hpp"
#include "docmmir/error.hpp"

namespace docmmir::annotate {

enum class Role { system, user };
std::string_view to_string(Role r);

struct Message {
    Role role = Role::user;
    std::string text;
    std::vector<std::string> image_urls;  ///< sent before the text part
    bool multipart = false;               ///< content is a list of parts rather than a string

    bool operator==(const Message&) const = default;
};

using Prompt = std::vector<Message>;

/// Chat-completions "messages" array.
nlohmann::ordered_json prompt_to_json(const Prompt& prompt);
/// SHA-256 of the compact JSON rendering.
std::string prompt_hash(const Prompt& prompt);

/// Document text as sent to the model: text blocks joined by newlines.
std::string document_text(const corpus::Document& doc);

/// Image references become image_url parts; a non-empty root is joined in front with '/'.
struct QueryPromptOptions {
    std::string image_root;
};

/// Throws ArgumentError if the document has no text or no images.
Prompt render_query_prompt(const corpus::Document& doc, const QueryPromptOptions& options = {});
/// Throws ArgumentError on empty text.
Prompt render_judge_prompt(std::string_view text);

/// A failed exchange that may succeed if retried (network, timeout, 5xx).
class TransportError : public Error {
public:
    using Error::Error;
};

class Transport {
public:
    virtual ~Transport() = default;
    /// Returns the reply text. Throws TransportError on a retryable failure.
    /// May be called from several threads at once.
    virtual std::string complete(const Prompt& prompt) = 0;
};

class HttpTransport final : public Transport {
public:
    struct Config {
        std::string endpoint;
        std::string api_key;
        std::string model;
        std::chrono::seconds timeout{60};
        /// Throws ArgumentError naming the missing or malformed variable. A
        /// non-empty `endpoint` replaces DOCMMIR_LLM_ENDPOINT.
        static Config from_env(const std::string& endpoint = {});
    };

    explicit HttpTransport(Config config);
    std::string complete(const Prompt& prompt) override;

    /// Request body for a prompt.
    nlohmann::ordered_json request_body(const Prompt& prompt) const;
    /// Reply text of a chat completions response body. Throws DataError.
    static std::string parse_response(std::string_view body);

private:
    Config config_;
    std::string origin_;  ///< scheme://host[:port]
    std::string path_;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

struct RetryPolicy {
    std::size_t attempts = 3;
    std::chrono::milliseconds initial_delay{1000};
    std::chrono::milliseconds max_delay{8000};
    Sleeper sleep;  ///< empty means std::this_thread::sleep_for

    /// Delay before retry number `retry` (1-based): initial * 2^(retry-1), capped.
    std::chrono::milliseconds delay(std::size_t retry) const;
};

/// Calls the transport until it succeeds or the attempts run out; the last
/// TransportError is rethrown. Other exceptions propagate immediately.
std::string complete_with_retry(Transport& transport, const Prompt& prompt, const RetryPolicy& retry);

/// One JSONL record per exchange: {doc_id, prompt_hash, raw_response, parsed_result, timestamp}.
class AuditLog {
public:
    using Clock = std::function<std::chrono::system_clock::time_point()>;

    explicit AuditLog(std::ostream& out, Clock clock = {});
    void record(std::string_view doc_id, std::string_view prompt_hash, std::string_view raw_response,
                const nlohmann::ordered_json& parsed_result);

private:
    std::mutex mu_;
    std::ostream& out_;
    Clock clock_;
};

/// Text after the first line that starts with "Q:", trimmed. Throws DataError
/// "missing Q: marker" when no line has it or nothing follows it.
std::string parse_query_response(std::string_view raw);

struct Client {
    Transport& transport;
    RetryPolicy retry{};
    AuditLog* audit = nullptr;
    QueryPromptOptions prompt_options{};
};

std::string generate_query(const corpus::Document& doc, Client& client);

enum class Answer { yes, no };

struct JudgeVerdict {
    Answer answer = Answer::no;
    std::string raw_response;
    std::optional<std::string> warning;  ///< set when no yes/no token was found
};

/// The first ASCII-alphanumeric token equal to "yes" or "no" (any case)
/// decides; without one the answer is no and a warning is attached.
JudgeVerdict parse_verdict(std::string_view raw);

JudgeVerdict judge_quality(std::string_view text, Client& client, std::string_view doc_id = {});

struct JudgeGate {
    std::vector<corpus::Domain> domains{corpus::Domain::slide};
    bool applies_to(corpus::Domain d) const;
};

struct GateResult {
    std::vector<corpus::Document> accepted;  ///< input order
    std::vector<corpus::Reject> rejects;     ///< rule "judge", input order
    std::vector<std::string> warnings;
};

/// Judges the joined text of every document whose domain the gate covers,
/// with at most `in_flight` concurrent requests. A transport failure after
/// retries propagates.
GateResult apply_judge_gate(std::span<const corpus::Document> docs, const JudgeGate& gate, Client& client,
                            std::size_t in_flight = 1);

struct QueryResult {
    std::string doc_id;
    std::optional<std::string> query;
    std::string error;  ///< set when no query was produced
};

/// One generated query per document, aligned with `docs`, with at most
/// `in_flight` concurrent requests. Failures are reported per document.
std::vector<QueryResult> generate_queries(std::span<const corpus::Document> docs, Client& client,
                                          std::size_t in_flight = 1);

}  // namespace docmmir::annotate
