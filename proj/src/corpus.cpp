#include "docmmir/corpus.hpp"

#include <algorithm>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "docmmir/binary_io.hpp"
#include "docmmir/error.hpp"
#include "docmmir/unicode.hpp"

namespace docmmir::corpus {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(Domain d) {
    switch (d) {
        case Domain::wiki: return "wiki";
        case Domain::arxiv: return "arxiv";
        case Domain::slide: return "slide";
    }
    return "?";
}

std::string_view to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::valid: return "valid";
        case Split::test: return "test";
    }
    return "?";
}

std::optional<Domain> parse_domain(std::string_view s) {
    for (auto d : kDomains)
        if (to_string(d) == s) return d;
    return std::nullopt;
}

std::optional<Split> parse_split(std::string_view s) {
    for (auto sp : {Split::train, Split::valid, Split::test})
        if (to_string(sp) == s) return sp;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Loading

namespace {

constexpr std::array<std::string_view, 5> kFields{"id", "domain", "texts", "images", "queries"};

struct LineOutcome {
    std::optional<Document> doc;
    std::optional<Reject> reject;
    std::vector<std::string> warnings;
};

bool read_string_list(const json& j, std::vector<std::string>& out) {
    if (!j.is_array()) return false;
    for (const auto& e : j) {
        if (!e.is_string()) return false;
        out.push_back(e.get<std::string>());
    }
    return true;
}

LineOutcome parse_line(std::string_view line, std::size_t lineno, const LoadOptions& options) {
    LineOutcome out;
    const std::string where = "line " + std::to_string(lineno);
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        out.reject = Reject{"", "schema", where + ": invalid JSON: " + e.what()};
        return out;
    }
    if (!j.is_object()) {
        out.reject = Reject{"", "schema", where + ": not a JSON object"};
        return out;
    }
    std::string id;
    if (auto it = j.find("id"); it != j.end() && it->is_string()) id = it->get<std::string>();
    auto fail = [&](std::string detail) {
        out.reject = Reject{id, "schema", std::move(detail)};
        return out;
    };

    for (auto field : kFields)
        if (!j.contains(field)) return fail("missing field: " + std::string(field));
    for (const auto& [key, value] : j.items()) {
        if (std::find(kFields.begin(), kFields.end(), key) != kFields.end()) continue;
        if (options.strict) return fail("unknown field: " + key);
        out.warnings.push_back(where + ": ignoring unknown field: " + key);
    }

    Document doc;
    if (!j["id"].is_string() || id.empty()) return fail("wrong type: id");
    doc.id = id;
    if (!j["domain"].is_string()) return fail("wrong type: domain");
    auto domain = parse_domain(j["domain"].get<std::string>());
    if (!domain) return fail("unknown domain: " + j["domain"].get<std::string>());
    doc.domain = *domain;
    if (!read_string_list(j["texts"], doc.texts)) return fail("wrong type: texts");
    if (!read_string_list(j["images"], doc.images)) return fail("wrong type: images");
    if (!read_string_list(j["queries"], doc.queries)) return fail("wrong type: queries");
    out.doc = std::move(doc);
    return out;
}

}  // namespace

Corpus parse_corpus(std::string_view jsonl, Split expected_split, LoadOptions options) {
    Corpus corpus;
    corpus.split = expected_split;
    std::unordered_set<std::string> seen;
    std::size_t lineno = 0;
    std::size_t start = 0;
    while (start < jsonl.size()) {
        auto end = jsonl.find('\n', start);
        if (end == std::string_view::npos) end = jsonl.size();
        auto line = jsonl.substr(start, end - start);
        start = end + 1;
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

        auto outcome = parse_line(line, lineno, options);
        for (auto& w : outcome.warnings) corpus.warnings.push_back(std::move(w));
        if (outcome.reject) {
            corpus.rejects.push_back(std::move(*outcome.reject));
            continue;
        }
        if (!seen.insert(outcome.doc->id).second)
            throw DataError("duplicate id '" + outcome.doc->id + "' at line " + std::to_string(lineno));
        corpus.docs.push_back(std::move(*outcome.doc));
    }
    return corpus;
}

Corpus load_corpus(const std::string& path, Split expected_split, LoadOptions options) {
    const auto contents = io::read_file(path);
    try {
        return parse_corpus(contents, expected_split, options);
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

std::string to_json_line(const Document& doc) {
    ordered_json j;
    j["id"] = doc.id;
    j["domain"] = to_string(doc.domain);
    j["texts"] = doc.texts;
    j["images"] = doc.images;
    j["queries"] = doc.queries;
    return j.dump();
}

std::string to_jsonl(std::span<const Document> docs) {
    std::string out;
    for (const auto& d : docs) {
        out += to_json_line(d);
        out += '\n';
    }
    return out;
}

ordered_json reject_to_json(const Reject& r) {
    ordered_json j;
    j["id"] = r.id;
    j["rule"] = r.rule;
    j["detail"] = r.detail;
    return j;
}

std::string rejects_to_jsonl(std::span<const Reject> rejects) {
    std::string out;
    for (const auto& r : rejects) {
        out += reject_to_json(r).dump();
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Policy

FilterPolicy FilterPolicy::defaults_for(Domain domain) {
    FilterPolicy p;
    p.strip_math = domain == Domain::arxiv;
    return p;
}

void FilterPolicy::validate() const {
    if (garbled_min_run < 1) throw ArgumentError("garbled_min_run must be >= 1");
    if (!(garbled_doc_fraction >= 0.0 && garbled_doc_fraction <= 1.0))
        throw ArgumentError("garbled_doc_fraction must lie in [0, 1]");
}

namespace {

void apply_policy_json(const json& j, FilterPolicy& p) {
    if (!j.is_object()) throw ArgumentError("policy must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (key == "min_tokens") p.min_tokens = value.get<std::size_t>();
        else if (key == "min_images") p.min_images = value.get<std::size_t>();
        else if (key == "garbled_min_run") p.garbled_min_run = value.get<std::size_t>();
        else if (key == "garbled_doc_fraction") p.garbled_doc_fraction = value.get<double>();
        else if (key == "strip_math") p.strip_math = value.get<bool>();
        else throw ArgumentError("unknown policy field: " + key);
    }
    p.validate();
}

ordered_json policy_to_json(const FilterPolicy& p) {
    ordered_json j;
    j["min_tokens"] = p.min_tokens;
    j["min_images"] = p.min_images;
    j["garbled_min_run"] = p.garbled_min_run;
    j["garbled_doc_fraction"] = p.garbled_doc_fraction;
    j["strip_math"] = p.strip_math;
    return j;
}

}  // namespace

PolicySet PolicySet::from_json(const json& j) {
    PolicySet set;
    if (!j.is_object()) throw ArgumentError("policy must be a JSON object");
    const bool per_domain = std::any_of(j.items().begin(), j.items().end(),
                                        [](const auto& kv) { return parse_domain(kv.key()).has_value(); });
    try {
        if (per_domain) {
            for (const auto& [key, value] : j.items()) {
                auto d = parse_domain(key);
                if (!d) throw ArgumentError("unknown policy domain: " + key);
                apply_policy_json(value, set.by_domain[static_cast<std::size_t>(*d)]);
            }
        } else {
            for (auto& p : set.by_domain) apply_policy_json(j, p);
        }
    } catch (const json::exception& e) {
        throw ArgumentError(std::string("bad policy value: ") + e.what());
    }
    return set;
}

ordered_json PolicySet::to_json() const {
    ordered_json j;
    for (auto d : kDomains) j[std::string(to_string(d))] = policy_to_json(for_domain(d));
    return j;
}

// ---------------------------------------------------------------------------
// Text cleaning

namespace {

constexpr std::string_view kBeginEq = "\\begin{equation}";
constexpr std::string_view kEndEq = "\\end{equation}";

bool escaped(std::string_view s, std::size_t pos) {
    std::size_t backslashes = 0;
    while (pos > backslashes && s[pos - backslashes - 1] == '\\') ++backslashes;
    return backslashes % 2 == 1;
}

std::size_t find_unescaped(std::string_view s, std::string_view needle, std::size_t from) {
    for (auto p = s.find(needle, from); p != std::string_view::npos; p = s.find(needle, p + 1))
        if (!escaped(s, p)) return p;
    return std::string_view::npos;
}

std::string strip_pass(std::string_view s, std::vector<std::string>& warnings) {
    std::string out;
    std::size_t i = 0;
    while (i < s.size()) {
        const auto env = s.find(kBeginEq, i);
        const auto dollar = find_unescaped(s, "$", i);
        if (env == std::string_view::npos && dollar == std::string_view::npos) break;

        if (env != std::string_view::npos && (dollar == std::string_view::npos || env < dollar)) {
            const auto close = s.find(kEndEq, env + kBeginEq.size());
            if (close == std::string_view::npos) {
                warnings.push_back("unbalanced \\begin{equation} at byte " + std::to_string(env));
                break;
            }
            out.append(s.substr(i, env - i));
            i = close + kEndEq.size();
            continue;
        }

        const bool display = s.substr(dollar, 2) == "$$";
        const std::string_view delim = display ? "$$" : "$";
        const auto close = find_unescaped(s, delim, dollar + delim.size());
        if (close == std::string_view::npos) {
            warnings.push_back("unbalanced " + std::string(delim) + " at byte " + std::to_string(dollar));
            break;
        }
        out.append(s.substr(i, dollar - i));
        i = close + delim.size();
    }
    out.append(s.substr(std::min(i, s.size())));
    return out;
}

}  // namespace

StripResult strip_math(std::string_view text) {
    StripResult result;
    std::string current(text);
    for (;;) {
        std::vector<std::string> warnings;
        auto next = strip_pass(current, warnings);
        if (next == current) {
            result.warnings = std::move(warnings);
            break;
        }
        current = std::move(next);
    }
    result.text = std::move(current);
    return result;
}

bool has_latex_artifact(std::string_view text) {
    if (text.find("\\begin{") != std::string_view::npos || text.find("\\end{") != std::string_view::npos) return true;
    if (text.find("$$") != std::string_view::npos) return true;
    for (std::size_t p = text.find('\\'); p != std::string_view::npos; p = text.find('\\', p + 1)) {
        std::size_t q = p + 1;
        while (q < text.size() && std::isalpha(static_cast<unsigned char>(text[q]))) ++q;
        if (q > p + 1 && q < text.size() && text[q] == '{') return true;
    }
    return false;
}

std::size_t longest_special_run(std::string_view paragraph) {
    std::size_t best = 0;
    std::size_t run = 0;
    for (char32_t c : unicode::decode(paragraph)) {
        if (unicode::is_word(c) || unicode::is_space(c)) {
            run = 0;
        } else {
            best = std::max(best, ++run);
        }
    }
    return best;
}

bool is_garbled(std::string_view paragraph, const FilterPolicy& policy) {
    return longest_special_run(paragraph) >= policy.garbled_min_run || has_latex_artifact(paragraph);
}

// ---------------------------------------------------------------------------
// Filtering

Document clean_document(const Document& doc, const FilterPolicy& policy, std::vector<std::string>* warnings) {
    if (!policy.strip_math) return doc;
    Document out = doc;
    for (std::size_t k = 0; k < out.texts.size(); ++k) {
        auto stripped = strip_math(out.texts[k]);
        out.texts[k] = std::move(stripped.text);
        if (warnings)
            for (auto& w : stripped.warnings)
                warnings->push_back(doc.id + " texts[" + std::to_string(k) + "]: " + w);
    }
    return out;
}

Verdict filter_document(const Document& doc, const FilterPolicy& policy, const TokenizerHandle& tokenizer) {
    const Document cleaned = clean_document(doc, policy);

    if (cleaned.images.size() < policy.min_images)
        return Verdict::reject("images", std::to_string(cleaned.images.size()) + " images < " +
                                             std::to_string(policy.min_images));

    std::size_t tokens = 0;
    for (const auto& t : cleaned.texts) tokens += count_tokens(t, tokenizer);
    if (tokens <= policy.min_tokens)
        return Verdict::reject("tokens",
                               std::to_string(tokens) + " tokens <= " + std::to_string(policy.min_tokens));

    if (!cleaned.texts.empty()) {
        const auto garbled = static_cast<std::size_t>(std::count_if(
            cleaned.texts.begin(), cleaned.texts.end(), [&](const std::string& t) { return is_garbled(t, policy); }));
        const double fraction = static_cast<double>(garbled) / static_cast<double>(cleaned.texts.size());
        if (fraction > policy.garbled_doc_fraction)
            return Verdict::reject("garbled", std::to_string(garbled) + "/" + std::to_string(cleaned.texts.size()) +
                                                  " paragraphs garbled");
    }
    return Verdict::accept();
}

FilterResult filter_corpus(std::span<const Document> docs, const PolicySet& policies,
                           const TokenizerHandle& tokenizer, unsigned threads) {
    if (!tokenizer) throw ArgumentError("tokenizer not loaded");
    struct Slot {
        Verdict verdict;
        Document cleaned;
        std::vector<std::string> warnings;
    };
    std::vector<Slot> slots(docs.size());
    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const auto& policy = policies.for_domain(docs[i].domain);
            slots[i].cleaned = clean_document(docs[i], policy, &slots[i].warnings);
            slots[i].verdict = filter_document(docs[i], policy, tokenizer);
        }
    };

    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(docs.size())));
    if (threads <= 1) {
        work(0, docs.size());
    } else {
        std::vector<std::jthread> pool;
        const std::size_t chunk = (docs.size() + threads - 1) / threads;
        for (unsigned t = 0; t < threads; ++t) {
            const std::size_t begin = t * chunk;
            const std::size_t end = std::min(docs.size(), begin + chunk);
            if (begin < end) pool.emplace_back(work, begin, end);
        }
    }

    FilterResult result;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        auto& s = slots[i];
        for (auto& w : s.warnings) result.warnings.push_back(std::move(w));
        if (s.verdict.accepted) {
            result.accepted.push_back(std::move(s.cleaned));
        } else {
            result.rejects.push_back({docs[i].id, s.verdict.rule, s.verdict.detail});
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Statistics

namespace {

struct Accumulator {
    std::size_t counts[3] = {0, 0, 0};
    std::size_t docs = 0;
    std::size_t images = 0;
    std::size_t text_tokens = 0;
    std::size_t query_tokens = 0;
    std::size_t queries = 0;

    DomainStats finish() const {
        DomainStats s;
        s.train = counts[0];
        s.valid = counts[1];
        s.test = counts[2];
        s.total = docs;
        s.queries = queries;
        if (docs > 0) {
            s.avg_images = static_cast<double>(images) / static_cast<double>(docs);
            s.avg_text_tokens = static_cast<double>(text_tokens) / static_cast<double>(docs);
        }
        if (queries > 0) s.avg_query_tokens = static_cast<double>(query_tokens) / static_cast<double>(queries);
        return s;
    }
};

}  // namespace

CorpusStats compute_stats(std::span<const Corpus> splits, const TokenizerHandle& tokenizer) {
    if (!tokenizer) throw ArgumentError("tokenizer not loaded");
    std::array<Accumulator, 3> per_domain{};
    Accumulator all;
    for (const auto& corpus : splits) {
        const auto split = static_cast<std::size_t>(corpus.split);
        for (const auto& doc : corpus.docs) {
            std::size_t text_tokens = 0;
            for (const auto& t : doc.texts) text_tokens += tokenizer->count(t);
            std::size_t query_tokens = 0;
            for (const auto& q : doc.queries) query_tokens += tokenizer->count(q);
            for (auto* acc : {&per_domain[static_cast<std::size_t>(doc.domain)], &all}) {
                acc->counts[split] += 1;
                acc->docs += 1;
                acc->images += doc.images.size();
                acc->text_tokens += text_tokens;
                acc->query_tokens += query_tokens;
                acc->queries += doc.queries.size();
            }
        }
    }
    if (all.docs == 0) throw ArgumentError("compute_stats: no documents");
    CorpusStats stats;
    for (std::size_t d = 0; d < 3; ++d) stats.by_domain[d] = per_domain[d].finish();
    stats.overall = all.finish();
    return stats;
}

CorpusStats compute_stats(std::span<const Document> docs, const TokenizerHandle& tokenizer, Split split) {
    Corpus c;
    c.split = split;
    c.docs.assign(docs.begin(), docs.end());
    return compute_stats(std::span<const Corpus>(&c, 1), tokenizer);
}

ordered_json CorpusStats::to_json() const {
    ordered_json j;
    j["columns"] = {"wiki", "arxiv", "slide", "total"};
    ordered_json rows = ordered_json::array();
    auto add = [&](const char* name, auto getter) {
        ordered_json row;
        row["statistic"] = name;
        for (auto d : kDomains) row[std::string(to_string(d))] = getter(domain(d));
        row["total"] = getter(overall);
        rows.push_back(std::move(row));
    };
    add("train", [](const DomainStats& s) { return s.train; });
    add("valid", [](const DomainStats& s) { return s.valid; });
    add("test", [](const DomainStats& s) { return s.test; });
    add("total_docs", [](const DomainStats& s) { return s.total; });
    add("avg_images", [](const DomainStats& s) { return s.avg_images; });
    add("avg_text_tokens", [](const DomainStats& s) { return s.avg_text_tokens; });
    add("avg_query_tokens", [](const DomainStats& s) { return s.avg_query_tokens; });
    j["rows"] = std::move(rows);
    return j;
}

}  // namespace docmmir::corpus
