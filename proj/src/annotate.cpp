#include "docmmir/annotate.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "docmmir/hash.hpp"
#include "docmmir/parallel.hpp"
#include "docmmir/timestamp.hpp"

namespace docmmir::annotate {

namespace {

constexpr std::string_view kQuerySystem = "You are a helpful natural language processing expert.";

constexpr std::string_view kQueryInstruction =
    "You are tasked with generating a thought-provoking question "
    "based on the given image-text data from a document. "
    "The question should capture the overall theme or deeper "
    "meaning of the document, rather than specific visual details. "
    "It must be abstract, invite critical reflection, and avoid "
    "a direct answer from the context. "
    "Do not be overly generic—ensure the question aligns with "
    "the unique visual cues of the document. "
    "Begin your output with 'Q:' followed by the generated question. ";

constexpr std::string_view kJudgeSystem =
    "You are a generous language quality classifier. "
    "Your task is to determine whether a given text segment, possibly "
    "extracted from an OCR-processed document, likely contains meaningful "
    "human-written content. You should accept text that is partially "
    "broken, informal, or noisy, as long as it seems intended to "
    "communicate something relevant. Accept marketing language, product "
    "descriptions, announcements, or technical explanations. Only reject "
    "text if it is purely noise, random symbols, or unreadable junk. "
    "/no_think";

constexpr std::string_view kJudgeExamples =
    "Below are some examples:\n\n"
    "Text: 'Figure 3: 0.233!!@@## 19982ab' → No\n"
    "Text: 'Explori enables survey management for licensed events.' → Yes\n"
    "Text: 'Chart axis: year, value, growth' → No\n"
    "Text: 'This document introduces a framework for multi-modal IR tasks "
    "in scientific domains.' → Yes\n"
    "Text: 'http://bit.ly/xyz download summary' → No\n"
    "Text: 'Project overview and next steps: iterate, test, deploy' → Yes\n"
    "---\n\n"
    "Now classify the following:\n\n";

constexpr std::string_view kJudgeQuestion =
    "\n\nIs this meaningful human language? Respond with one word only: "
    "'Yes' or 'No'.";

std::string_view trim(std::string_view s) {
    const auto ws = " \t\r\n\f\v";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

std::string lower_ascii(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string env_or(const char* name, std::string fallback = {}) {
    const char* v = std::getenv(name);
    return v && *v ? std::string(v) : fallback;
}

}  // namespace

std::string_view to_string(Role r) { return r == Role::system ? "system" : "user"; }

nlohmann::ordered_json prompt_to_json(const Prompt& prompt) {
    auto out = nlohmann::ordered_json::array();
    for (const auto& m : prompt) {
        nlohmann::ordered_json j;
        j["role"] = to_string(m.role);
        if (m.multipart) {
            auto parts = nlohmann::ordered_json::array();
            for (const auto& url : m.image_urls)
                parts.push_back({{"type", "image_url"}, {"image_url", {{"url", url}}}});
            parts.push_back({{"type", "text"}, {"text", m.text}});
            j["content"] = std::move(parts);
        } else {
            j["content"] = m.text;
        }
        out.push_back(std::move(j));
    }
    return out;
}

std::string prompt_hash(const Prompt& prompt) { return sha256_hex(prompt_to_json(prompt).dump()); }

std::string document_text(const corpus::Document& doc) {
    std::string out;
    for (std::size_t i = 0; i < doc.texts.size(); ++i) {
        if (i) out += '\n';
        out += doc.texts[i];
    }
    return out;
}

Prompt render_query_prompt(const corpus::Document& doc, const QueryPromptOptions& options) {
    const auto text = document_text(doc);
    if (trim(text).empty()) throw ArgumentError("document '" + doc.id + "' has no text to prompt with");
    if (doc.images.empty()) throw ArgumentError("document '" + doc.id + "' has no images to prompt with");
    Message user;
    user.role = Role::user;
    user.multipart = true;
    for (const auto& ref : doc.images)
        user.image_urls.push_back(options.image_root.empty() ? ref : options.image_root + "/" + ref);
    user.text = std::string(kQueryInstruction) + text;
    return {Message{Role::system, std::string(kQuerySystem), {}, false}, std::move(user)};
}

Prompt render_judge_prompt(std::string_view text) {
    if (trim(text).empty()) throw ArgumentError("nothing to judge: empty text");
    std::string user(kJudgeExamples);
    user += "Text: ";
    user += text;
    user += kJudgeQuestion;
    return {Message{Role::system, std::string(kJudgeSystem), {}, false}, Message{Role::user, user, {}, false}};
}

HttpTransport::Config HttpTransport::Config::from_env(const std::string& endpoint) {
    Config c;
    c.endpoint = endpoint.empty() ? env_or("DOCMMIR_LLM_ENDPOINT") : endpoint;
    c.api_key = env_or("DOCMMIR_LLM_API_KEY");
    c.model = env_or("DOCMMIR_LLM_MODEL");
    if (c.endpoint.empty()) throw ArgumentError("DOCMMIR_LLM_ENDPOINT is not set");
    if (c.model.empty()) throw ArgumentError("DOCMMIR_LLM_MODEL is not set");
    const auto timeout = env_or("DOCMMIR_LLM_TIMEOUT", "60");
    char* end = nullptr;
    const long secs = std::strtol(timeout.c_str(), &end, 10);
    if (*end != '\0' || secs <= 0) throw ArgumentError("DOCMMIR_LLM_TIMEOUT must be a positive integer");
    c.timeout = std::chrono::seconds(secs);
    return c;
}

HttpTransport::HttpTransport(Config config) : config_(std::move(config)) {
    const auto scheme_end = config_.endpoint.find("://");
    if (scheme_end == std::string::npos) throw ArgumentError("endpoint must be an http(s) URL: " + config_.endpoint);
    const auto scheme = config_.endpoint.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") throw ArgumentError("unsupported endpoint scheme '" + scheme + "'");
    const auto path_start = config_.endpoint.find('/', scheme_end + 3);
    origin_ = config_.endpoint.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : config_.endpoint.substr(path_start);
    if (origin_.size() <= scheme_end + 3) throw ArgumentError("endpoint has no host: " + config_.endpoint);
}

nlohmann::ordered_json HttpTransport::request_body(const Prompt& prompt) const {
    nlohmann::ordered_json body;
    body["model"] = config_.model;
    body["messages"] = prompt_to_json(prompt);
    return body;
}

std::string HttpTransport::parse_response(std::string_view body) {
    try {
        const auto j = nlohmann::json::parse(body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("unexpected completion response: ") + e.what());
    }
}

std::string HttpTransport::complete(const Prompt& prompt) {
    httplib::Client cli(origin_);
    const auto secs = static_cast<time_t>(config_.timeout.count());
    cli.set_connection_timeout(secs, 0);
    cli.set_read_timeout(secs, 0);
    cli.set_write_timeout(secs, 0);
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);
    const auto res = cli.Post(path_, headers, request_body(prompt).dump(), "application/json");
    if (!res) throw TransportError("request to " + config_.endpoint + " failed: " + httplib::to_string(res.error()));
    if (res->status == 429 || res->status >= 500)
        throw TransportError("endpoint returned HTTP " + std::to_string(res->status));
    if (res->status != 200) throw DataError("endpoint returned HTTP " + std::to_string(res->status) + ": " + res->body);
    return parse_response(res->body);
}

std::chrono::milliseconds RetryPolicy::delay(std::size_t retry) const {
    auto d = initial_delay;
    for (std::size_t i = 1; i < retry && d < max_delay; ++i) d *= 2;
    return std::min(d, max_delay);
}

std::string complete_with_retry(Transport& transport, const Prompt& prompt, const RetryPolicy& retry) {
    if (retry.attempts == 0) throw ArgumentError("retry policy needs at least one attempt");
    for (std::size_t attempt = 1;; ++attempt) {
        try {
            return transport.complete(prompt);
        } catch (const TransportError&) {
            if (attempt >= retry.attempts) throw;
            const auto d = retry.delay(attempt);
            if (retry.sleep)
                retry.sleep(d);
            else
                std::this_thread::sleep_for(d);
        }
    }
}

AuditLog::AuditLog(std::ostream& out, Clock clock) : out_(out), clock_(std::move(clock)) {
    if (!clock_) clock_ = [] { return std::chrono::system_clock::now(); };
}

void AuditLog::record(std::string_view doc_id, std::string_view hash, std::string_view raw_response,
                      const nlohmann::ordered_json& parsed_result) {
    nlohmann::ordered_json j;
    j["doc_id"] = doc_id;
    j["prompt_hash"] = hash;
    j["raw_response"] = raw_response;
    j["parsed_result"] = parsed_result;
    j["timestamp"] = iso8601_utc(clock_());
    const auto line = j.dump() + "\n";
    std::lock_guard lock(mu_);
    out_ << line;
    out_.flush();
}

std::string parse_query_response(std::string_view raw) {
    std::string_view rest = raw;
    while (!rest.empty()) {
        const auto nl = rest.find('\n');
        const auto line = trim(rest.substr(0, nl));
        if (line.substr(0, 2) == "Q:") {
            const auto after = trim(raw.substr(static_cast<std::size_t>(line.data() - raw.data()) + 2));
            if (!after.empty()) return std::string(after);
            break;
        }
        if (nl == std::string_view::npos) break;
        rest = rest.substr(nl + 1);
    }
    throw DataError("missing Q: marker");
}

std::string generate_query(const corpus::Document& doc, Client& client) {
    const auto prompt = render_query_prompt(doc, client.prompt_options);
    const auto raw = complete_with_retry(client.transport, prompt, client.retry);
    std::string query;
    try {
        query = parse_query_response(raw);
    } catch (const DataError& e) {
        if (client.audit) client.audit->record(doc.id, prompt_hash(prompt), raw, {{"error", e.what()}});
        throw;
    }
    if (client.audit) client.audit->record(doc.id, prompt_hash(prompt), raw, {{"query", query}});
    return query;
}

JudgeVerdict parse_verdict(std::string_view raw) {
    JudgeVerdict v;
    v.raw_response = std::string(raw);
    std::size_t i = 0;
    while (i < raw.size()) {
        while (i < raw.size() && !std::isalnum(static_cast<unsigned char>(raw[i]))) ++i;
        const std::size_t start = i;
        while (i < raw.size() && std::isalnum(static_cast<unsigned char>(raw[i]))) ++i;
        const auto token = lower_ascii(raw.substr(start, i - start));
        if (token == "yes") {
            v.answer = Answer::yes;
            return v;
        }
        if (token == "no") return v;
    }
    v.warning = "judge response has no Yes/No answer; treating as No: " + std::string(trim(raw));
    return v;
}

JudgeVerdict judge_quality(std::string_view text, Client& client, std::string_view doc_id) {
    const auto prompt = render_judge_prompt(text);
    const auto raw = complete_with_retry(client.transport, prompt, client.retry);
    auto verdict = parse_verdict(raw);
    if (client.audit) {
        nlohmann::ordered_json parsed{{"answer", verdict.answer == Answer::yes ? "yes" : "no"}};
        if (verdict.warning) parsed["warning"] = *verdict.warning;
        client.audit->record(doc_id, prompt_hash(prompt), raw, parsed);
    }
    return verdict;
}

bool JudgeGate::applies_to(corpus::Domain d) const {
    return std::find(domains.begin(), domains.end(), d) != domains.end();
}

GateResult apply_judge_gate(std::span<const corpus::Document> docs, const JudgeGate& gate, Client& client,
                            std::size_t in_flight) {
    std::vector<std::optional<JudgeVerdict>> verdicts(docs.size());
    parallel_for(docs.size(), in_flight, [&](std::size_t i) {
        if (!gate.applies_to(docs[i].domain)) return;
        const auto text = document_text(docs[i]);
        if (trim(text).empty()) {
            verdicts[i] = JudgeVerdict{Answer::no, "", "document '" + docs[i].id + "' has no text to judge"};
            return;
        }
        verdicts[i] = judge_quality(text, client, docs[i].id);
    });

    GateResult out;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        const auto& v = verdicts[i];
        if (v && v->warning) out.warnings.push_back(docs[i].id + ": " + *v->warning);
        if (!v || v->answer == Answer::yes)
            out.accepted.push_back(docs[i]);
        else
            out.rejects.push_back({docs[i].id, "judge", "language judge answered no: " + std::string(trim(v->raw_response))});
    }
    return out;
}

std::vector<QueryResult> generate_queries(std::span<const corpus::Document> docs, Client& client,
                                          std::size_t in_flight) {
    std::vector<QueryResult> out(docs.size());
    parallel_for(docs.size(), in_flight, [&](std::size_t i) {
        out[i].doc_id = docs[i].id;
        try {
            out[i].query = generate_query(docs[i], client);
        } catch (const Error& e) {
            out[i].error = e.what();
        }
    });
    return out;
}

}  // namespace docmmir::annotate
