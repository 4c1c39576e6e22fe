#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <deque>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "docmmir/annotate.hpp"
#include "docmmir/hash.hpp"
#include "docmmir/random.hpp"

using namespace docmmir;
using namespace docmmir::annotate;
using namespace std::chrono_literals;

namespace {

corpus::Document fixture_doc() {
    corpus::Document d;
    d.id = "wiki-0001";
    d.domain = corpus::Domain::wiki;
    d.texts = {"Diana is a goddess of the hunt.", "Her cult spread across Italy."};
    d.images = {"img/diana_1.jpg", "img/diana_2.jpg"};
    return d;
}

// Replays scripted replies in order; an empty optional means a timeout.
class ScriptedTransport : public Transport {
public:
    explicit ScriptedTransport(std::deque<std::optional<std::string>> replies) : replies_(std::move(replies)) {}
    std::string complete(const Prompt& prompt) override {
        std::lock_guard lock(mu_);
        seen.push_back(prompt);
        if (replies_.empty()) throw std::logic_error("script exhausted");
        auto r = replies_.front();
        replies_.pop_front();
        if (!r) throw TransportError("timed out");
        return *r;
    }
    std::vector<Prompt> seen;

private:
    std::mutex mu_;
    std::deque<std::optional<std::string>> replies_;
};

// Answers from the prompt itself, after a random delay, so replies arrive out of order.
class EchoJudge : public Transport {
public:
    std::string complete(const Prompt& prompt) override {
        const auto& text = prompt.back().text;
        const auto active = ++in_flight;
        int prev = peak.load();
        while (active > prev && !peak.compare_exchange_weak(prev, active)) {
        }
        std::this_thread::sleep_for(std::chrono::microseconds(100 + std::hash<std::string>{}(text) % 2000));
        --in_flight;
        if (text.find("junk") != std::string::npos) return "No";
        if (text.find("mumble") != std::string::npos) return "hmm, hard to say";
        return " yes.";
    }
    std::atomic<int> in_flight{0}, peak{0};
};

RetryPolicy recording_retry(std::vector<std::chrono::milliseconds>& sleeps) {
    RetryPolicy r;
    r.sleep = [&sleeps](std::chrono::milliseconds d) { sleeps.push_back(d); };
    return r;
}

}  // namespace

TEST(Prompts, QueryPromptIsVerbatimAndDeterministic) {
    const auto doc = fixture_doc();
    const auto p = render_query_prompt(doc);
    ASSERT_EQ(p.size(), 2u);
    EXPECT_EQ(p[0].role, Role::system);
    EXPECT_EQ(p[0].text, "You are a helpful natural language processing expert.");
    EXPECT_FALSE(p[0].multipart);
    EXPECT_EQ(p[1].role, Role::user);
    EXPECT_TRUE(p[1].multipart);
    EXPECT_EQ(p[1].image_urls, doc.images);
    EXPECT_NE(p[1].text.find("Begin your output with 'Q:' followed by the generated question. "), std::string::npos);
    EXPECT_NE(p[1].text.find("Do not be overly generic\u2014ensure the question aligns with"), std::string::npos);
    const std::string tail = "generated question. Diana is a goddess of the hunt.\nHer cult spread across Italy.";
    EXPECT_EQ(p[1].text.substr(p[1].text.size() - tail.size()), tail);
    EXPECT_EQ(p[1].text.rfind("You are tasked with generating a thought-provoking question based on", 0), 0u);

    const auto j = prompt_to_json(p);
    EXPECT_EQ(j[1]["content"][0]["type"], "image_url");
    EXPECT_EQ(j[1]["content"][1]["image_url"]["url"], "img/diana_2.jpg");
    EXPECT_EQ(j[1]["content"][2]["type"], "text");
    EXPECT_EQ(j[0]["content"], p[0].text);

    EXPECT_EQ(prompt_to_json(render_query_prompt(doc)).dump(), j.dump());
    EXPECT_EQ(prompt_hash(p), sha256_hex(j.dump()));
    EXPECT_EQ(render_query_prompt(doc, {"/data"})[1].image_urls[0], "/data/img/diana_1.jpg");

    auto empty = doc;
    empty.texts.clear();
    EXPECT_THROW(render_query_prompt(empty), ArgumentError);
    empty.texts = {"  "};
    EXPECT_THROW(render_query_prompt(empty), ArgumentError);
    auto no_images = doc;
    no_images.images.clear();
    EXPECT_THROW(render_query_prompt(no_images), ArgumentError);
}

TEST(Prompts, JudgePromptIsVerbatim) {
    const auto p = render_judge_prompt("Quarterly roadmap review");
    ASSERT_EQ(p.size(), 2u);
    EXPECT_EQ(p[0].text.rfind("You are a generous language quality classifier. ", 0), 0u);
    const std::string sys_tail = "random symbols, or unreadable junk. /no_think";
    EXPECT_EQ(p[0].text.substr(p[0].text.size() - sys_tail.size()), sys_tail);
    EXPECT_NE(p[1].text.find("Text: 'Figure 3: 0.233!!@@## 19982ab' \u2192 No\n"), std::string::npos);
    EXPECT_NE(p[1].text.find("---\n\nNow classify the following:\n\nText: Quarterly roadmap review\n\n"), std::string::npos);
    const std::string tail = "Is this meaningful human language? Respond with one word only: 'Yes' or 'No'.";
    EXPECT_EQ(p[1].text.substr(p[1].text.size() - tail.size()), tail);
    EXPECT_THROW(render_judge_prompt(" \n"), ArgumentError);
}

TEST(QueryGeneration, MarkerStripping) {
    EXPECT_EQ(parse_query_response("Q: What drives the result?"), "What drives the result?");
    EXPECT_EQ(parse_query_response("Sure.\n  Q:   Why myths?  \n"), "Why myths?");
    EXPECT_EQ(parse_query_response("Q:\nHow do rituals persist?"), "How do rituals persist?");
    try {
        parse_query_response("no marker here");
        FAIL();
    } catch (const DataError& e) {
        EXPECT_STREQ(e.what(), "missing Q: marker");
    }
    EXPECT_THROW(parse_query_response("Q:   "), DataError);
    EXPECT_THROW(parse_query_response("The Q: is inline"), DataError);

    ScriptedTransport t({"Q: What drives the result?"});
    Client c{t};
    EXPECT_EQ(generate_query(fixture_doc(), c), "What drives the result?");
    ASSERT_EQ(t.seen.size(), 1u);
    EXPECT_EQ(t.seen[0], render_query_prompt(fixture_doc()));

    ScriptedTransport bad({"no marker here"});
    Client cb{bad};
    EXPECT_THROW(generate_query(fixture_doc(), cb), DataError);
}

TEST(QueryGeneration, RetriesWithCappedBackoff) {
    std::vector<std::chrono::milliseconds> sleeps;
    ScriptedTransport t({std::nullopt, std::nullopt, "Q: After retries?"});
    Client c{t, recording_retry(sleeps)};
    EXPECT_EQ(generate_query(fixture_doc(), c), "After retries?");
    EXPECT_EQ(sleeps, (std::vector<std::chrono::milliseconds>{1000ms, 2000ms}));

    sleeps.clear();
    ScriptedTransport down({std::nullopt, std::nullopt, std::nullopt, "Q: too late"});
    Client cd{down, recording_retry(sleeps)};
    EXPECT_THROW(generate_query(fixture_doc(), cd), TransportError);
    EXPECT_EQ(down.seen.size(), 3u);
    EXPECT_EQ(sleeps.size(), 2u);

    RetryPolicy r;
    EXPECT_EQ(r.delay(1), 1000ms);
    EXPECT_EQ(r.delay(3), 4000ms);
    EXPECT_EQ(r.delay(4), 8000ms);
    EXPECT_EQ(r.delay(20), 8000ms);
    r.attempts = 0;
    ScriptedTransport unused({});
    EXPECT_THROW(complete_with_retry(unused, {}, r), ArgumentError);
}

TEST(Judge, ParsesFirstYesNoToken) {
    EXPECT_EQ(parse_verdict("Yes").answer, Answer::yes);
    EXPECT_EQ(parse_verdict("No").answer, Answer::no);
    const auto maybe = parse_verdict("maybe?");
    EXPECT_EQ(maybe.answer, Answer::no);
    ASSERT_TRUE(maybe.warning.has_value());
    EXPECT_FALSE(parse_verdict("No").warning.has_value());
    EXPECT_EQ(parse_verdict("Answer: no, not really. yes?").answer, Answer::no);
    EXPECT_EQ(parse_verdict("Yesterday").answer, Answer::no);
    EXPECT_TRUE(parse_verdict("Yesterday").warning.has_value());
    EXPECT_EQ(parse_verdict("").answer, Answer::no);
    EXPECT_EQ(parse_verdict("'Yes'").raw_response, "'Yes'");

    Rng rng(51);
    const std::string pads[] = {"", " ", "\n", "\t ", "  \r\n"};
    const std::string tails[] = {"", ".", "!", "\n", "'"};
    for (int i = 0; i < 200; ++i) {
        for (const std::string word : {"yes", "no"}) {
            std::string cased = word;
            for (auto& c : cased)
                if (rng.below(2)) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
            const auto raw = pads[rng.below(5)] + cased + tails[rng.below(5)] + pads[rng.below(5)];
            EXPECT_EQ(parse_verdict(raw).answer, word == "yes" ? Answer::yes : Answer::no) << raw;
            EXPECT_FALSE(parse_verdict(raw).warning.has_value());
        }
    }
}

TEST(Judge, AuditLogRecordsEveryExchange) {
    std::ostringstream out;
    AuditLog log(out, [] { return std::chrono::system_clock::time_point(1700000000123ms); });
    ScriptedTransport t({"Yes", "Q: Why?"});
    Client c{t};
    c.audit = &log;
    EXPECT_EQ(judge_quality("Quarterly roadmap review", c, "slide-7").answer, Answer::yes);
    generate_query(fixture_doc(), c);

    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    const auto first = nlohmann::json::parse(line);
    EXPECT_EQ(first["doc_id"], "slide-7");
    EXPECT_EQ(first["prompt_hash"], prompt_hash(render_judge_prompt("Quarterly roadmap review")));
    EXPECT_EQ(first["raw_response"], "Yes");
    EXPECT_EQ(first["parsed_result"]["answer"], "yes");
    EXPECT_EQ(first["timestamp"], "2023-11-14T22:13:20.123Z");
    std::getline(in, line);
    const auto second = nlohmann::json::parse(line);
    EXPECT_EQ(second["doc_id"], "wiki-0001");
    EXPECT_EQ(second["parsed_result"]["query"], "Why?");
    const std::vector<std::string> keys{"doc_id", "prompt_hash", "raw_response", "parsed_result", "timestamp"};
    std::vector<std::string> got;
    const auto ordered = nlohmann::ordered_json::parse(line);
    for (const auto& [key, value] : ordered.items()) got.push_back(key);
    EXPECT_EQ(got, keys);
}

TEST(Judge, GateMatchesVerdictsToDocumentsUnderConcurrency) {
    std::vector<corpus::Document> docs;
    for (int i = 0; i < 40; ++i) {
        corpus::Document d;
        d.id = "doc" + std::to_string(i);
        d.domain = i % 4 == 3 ? corpus::Domain::wiki : corpus::Domain::slide;
        d.texts = {i % 5 == 0 ? "junk !!@@ " + std::to_string(i) : i % 7 == 1 ? "mumble" : "Project overview " + d.id};
        docs.push_back(d);
    }
    EchoJudge judge;
    Client c{judge};
    const auto r = apply_judge_gate(docs, JudgeGate{}, c, 4);
    EXPECT_LE(judge.peak.load(), 4);

    std::vector<std::string> want_accept, want_reject;
    for (const auto& d : docs) {
        const bool judged = d.domain == corpus::Domain::slide;
        const bool bad = d.texts[0].find("junk") != std::string::npos || d.texts[0] == "mumble";
        (judged && bad ? want_reject : want_accept).push_back(d.id);
    }
    std::vector<std::string> got_accept, got_reject;
    for (const auto& d : r.accepted) got_accept.push_back(d.id);
    for (const auto& x : r.rejects) {
        got_reject.push_back(x.id);
        EXPECT_EQ(x.rule, "judge");
    }
    EXPECT_EQ(got_accept, want_accept);
    EXPECT_EQ(got_reject, want_reject);
    std::size_t mumbles = 0;
    for (const auto& d : docs) mumbles += d.domain == corpus::Domain::slide && d.texts[0] == "mumble";
    EXPECT_EQ(r.warnings.size(), mumbles);

    JudgeGate none{{}};
    EXPECT_EQ(apply_judge_gate(docs, none, c, 2).accepted.size(), docs.size());
}

TEST(QueryGeneration, BatchReportsPerDocumentOutcomes) {
    auto a = fixture_doc(), b = fixture_doc(), e = fixture_doc();
    b.id = "wiki-0002";
    e.id = "wiki-0003";
    e.images.clear();
    std::vector<corpus::Document> docs{a, b, e};
    ScriptedTransport t({"Q: first?", "nothing"});
    Client c{t};
    const auto r = generate_queries(docs, c, 1);
    ASSERT_EQ(r.size(), 3u);
    EXPECT_EQ(r[0].query, std::optional<std::string>("first?"));
    EXPECT_FALSE(r[1].query.has_value());
    EXPECT_EQ(r[1].error, "missing Q: marker");
    EXPECT_FALSE(r[2].query.has_value());
    EXPECT_EQ(r[2].doc_id, "wiki-0003");
}

TEST(Http, TalksToChatCompletionsEndpoint) {
    httplib::Server server;
    std::atomic<int> calls{0};
    std::string seen_auth, seen_body;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        const int n = ++calls;
        seen_auth = req.get_header_value("Authorization");
        seen_body = req.body;
        if (n == 1) {
            res.status = 503;
            return;
        }
        res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"Q: Served?"}}]})",
                        "application/json");
    });
    server.Post("/bad", [](const httplib::Request&, httplib::Response& res) { res.status = 400; });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    HttpTransport::Config cfg{"http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions", "sekret", "vlm",
                              5s};
    HttpTransport http(cfg);
    std::vector<std::chrono::milliseconds> sleeps;
    Client c{http, recording_retry(sleeps)};
    EXPECT_EQ(generate_query(fixture_doc(), c), "Served?");
    EXPECT_EQ(calls.load(), 2);
    EXPECT_EQ(sleeps.size(), 1u);
    EXPECT_EQ(seen_auth, "Bearer sekret");
    const auto body = nlohmann::json::parse(seen_body);
    EXPECT_EQ(body["model"], "vlm");
    EXPECT_EQ(body["messages"], nlohmann::json::parse(prompt_to_json(render_query_prompt(fixture_doc())).dump()));

    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/bad";
    HttpTransport bad(cfg);
    EXPECT_THROW(bad.complete(render_judge_prompt("x")), DataError);

    server.stop();
    th.join();
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    cfg.timeout = 1s;
    HttpTransport gone(cfg);
    EXPECT_THROW(gone.complete(render_judge_prompt("x")), TransportError);

    EXPECT_THROW(HttpTransport({"ftp://host/x", "", "m", 1s}), ArgumentError);
    EXPECT_THROW(HttpTransport({"localhost:8000", "", "m", 1s}), ArgumentError);
    EXPECT_THROW(HttpTransport::parse_response("{}"), DataError);
    EXPECT_THROW(HttpTransport::parse_response("not json"), DataError);
}

TEST(Http, ConfigFromEnvironment) {
    ::unsetenv("DOCMMIR_LLM_ENDPOINT");
    ::unsetenv("DOCMMIR_LLM_MODEL");
    ::unsetenv("DOCMMIR_LLM_TIMEOUT");
    EXPECT_THROW(HttpTransport::Config::from_env(), ArgumentError);
    ::setenv("DOCMMIR_LLM_ENDPOINT", "https://llm.example/v1/chat/completions", 1);
    EXPECT_THROW(HttpTransport::Config::from_env(), ArgumentError);
    ::setenv("DOCMMIR_LLM_MODEL", "vlm", 1);
    ::setenv("DOCMMIR_LLM_API_KEY", "k", 1);
    const auto c = HttpTransport::Config::from_env();
    EXPECT_EQ(c.timeout, 60s);
    EXPECT_EQ(c.api_key, "k");
    ::setenv("DOCMMIR_LLM_TIMEOUT", "15", 1);
    EXPECT_EQ(HttpTransport::Config::from_env().timeout, 15s);
    ::setenv("DOCMMIR_LLM_TIMEOUT", "soon", 1);
    EXPECT_THROW(HttpTransport::Config::from_env(), ArgumentError);
    ::unsetenv("DOCMMIR_LLM_TIMEOUT");
    ::unsetenv("DOCMMIR_LLM_ENDPOINT");
    EXPECT_EQ(HttpTransport::Config::from_env("http://127.0.0.1:9/v1").endpoint, "http://127.0.0.1:9/v1");
    for (const char* v : {"DOCMMIR_LLM_ENDPOINT", "DOCMMIR_LLM_MODEL", "DOCMMIR_LLM_API_KEY", "DOCMMIR_LLM_TIMEOUT"})
        ::unsetenv(v);
}
