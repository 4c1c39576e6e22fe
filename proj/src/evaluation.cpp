#include "docmmir/evaluation.hpp"

#include <cstdio>
#include <unordered_set>

#include "docmmir/binary_io.hpp"
#include "docmmir/error.hpp"
#include "docmmir/parallel.hpp"

namespace docmmir::evaluation {

namespace {

constexpr std::string_view kQrelsHeader = "query_id\tdoc_id";

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string fixed(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", x);
    return buf;
}

void put_metrics(nlohmann::ordered_json& j, const Row& r) {
    j["queries"] = r.queries;
    j["mrr10"] = r.mrr10;
    j["ndcg10"] = r.ndcg10;
    j["hit1"] = r.hit1;
    j["hit3"] = r.hit3;
    j["hit10"] = r.hit10;
}

void add_doc(Pool& pool, const corpus::Document& doc) {
    if (!pool.domains.emplace(doc.id, doc.domain).second)
        throw DataError("document id '" + doc.id + "' appears in more than one split");
    pool.doc_ids.push_back(doc.id);
}

}  // namespace

QRels qrels_from_corpus(const corpus::Corpus& corpus) {
    QRels out;
    for (const auto& doc : corpus.docs)
        for (std::size_t k = 0; k < doc.queries.size(); ++k) out[embeddings::query_id(doc.id, k)] = doc.id;
    return out;
}

std::string qrels_to_tsv(const QRels& qrels) {
    std::string out(kQrelsHeader);
    out += '\n';
    for (const auto& [q, d] : qrels) out += q + '\t' + d + '\n';
    return out;
}

QRels qrels_from_tsv(std::string_view text) {
    QRels out;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        auto line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty() || (line_no == 1 && line == kQrelsHeader)) continue;
        const auto tab = line.find('\t');
        if (tab == std::string_view::npos || tab == 0 || tab + 1 == line.size() ||
            line.find('\t', tab + 1) != std::string_view::npos)
            throw DataError("qrels line " + std::to_string(line_no) + ": expected query_id<TAB>doc_id");
        if (!out.emplace(std::string(line.substr(0, tab)), std::string(line.substr(tab + 1))).second)
            throw DataError("qrels line " + std::to_string(line_no) + ": query '" +
                            std::string(line.substr(0, tab)) + "' already has a relevant document");
    }
    return out;
}

void write_qrels(const QRels& qrels, const std::string& path) { io::write_file_atomic(path, qrels_to_tsv(qrels)); }

QRels read_qrels(const std::string& path) { return qrels_from_tsv(io::read_file(path)); }

std::string_view to_string(Protocol p) { return p == Protocol::full_collection ? "full-collection" : "split-only"; }

Pool full_collection_pool(std::span<const corpus::Corpus> splits) {
    Pool pool;
    for (const auto& split : splits)
        for (const auto& doc : split.docs) add_doc(pool, doc);
    return pool;
}

Pool split_pool(const corpus::Corpus& split) {
    Pool pool;
    pool.protocol = Protocol::split_only;
    for (const auto& doc : split.docs) add_doc(pool, doc);
    return pool;
}

Row aggregate(std::string group, std::span<const metrics::Rank> ranks) {
    Row r;
    r.group = std::move(group);
    r.queries = ranks.size();
    r.mrr10 = metrics::mrr_at_10(ranks);
    r.ndcg10 = metrics::ndcg_at_10(ranks);
    r.hit1 = metrics::hit_at_k(ranks, 1);
    r.hit3 = metrics::hit_at_k(ranks, 3);
    r.hit10 = metrics::hit_at_k(ranks, 10);
    return r;
}

Row weighted_average(std::span<const Row> rows, std::string group) {
    Row out;
    out.group = std::move(group);
    for (const auto& r : rows) {
        const auto w = static_cast<double>(r.queries);
        out.queries += r.queries;
        out.mrr10 += w * r.mrr10;
        out.ndcg10 += w * r.ndcg10;
        out.hit1 += w * r.hit1;
        out.hit3 += w * r.hit3;
        out.hit10 += w * r.hit10;
    }
    if (out.queries > 0) {
        const auto n = static_cast<double>(out.queries);
        out.mrr10 /= n;
        out.ndcg10 /= n;
        out.hit1 /= n;
        out.hit3 /= n;
        out.hit10 /= n;
    }
    return out;
}

const Row& EvalReport::row(std::string_view group) const {
    for (const auto& r : rows)
        if (r.group == group) return r;
    throw ArgumentError("report has no row '" + std::string(group) + "'");
}

EvalReport evaluate(const embeddings::EmbeddingStore& queries, const retrieval::Index& index, const QRels& qrels,
                    const Pool& pool, EvalOptions options) {
    if (queries.dim() != index.dim())
        throw DataError("query dim " + std::to_string(queries.dim()) + " does not match index dim " +
                        std::to_string(index.dim()));
    if (index.size() != pool.size())
        throw DataError("index holds " + std::to_string(index.size()) + " documents but the pool has " +
                        std::to_string(pool.size()));
    const std::unordered_set<std::string> indexed(index.ids().begin(), index.ids().end());

    EvalReport report;
    report.protocol = pool.protocol;
    report.pool_size = pool.size();
    std::vector<std::pair<std::string, std::string>> pairs(qrels.begin(), qrels.end());
    for (const auto& [q, d] : pairs) {
        if (!queries.contains(q)) throw DataError("missing query embedding for '" + q + "'");
        if (!indexed.count(d)) throw DataError("relevant document '" + d + "' of query '" + q + "' is not indexed");
        if (!pool.domains.count(d)) throw DataError("relevant document '" + d + "' is not in the pool");
    }

    const std::size_t k = options.truncated ? std::min(metrics::kCutoff, index.size()) : index.size();
    report.outcomes.resize(pairs.size());
    parallel_for(pairs.size(), options.threads, [&](std::size_t i) {
        const auto& [q, d] = pairs[i];
        const auto hits = index.search(queries.get(q), k);
        auto& o = report.outcomes[i];
        o.query_id = q;
        o.doc_id = d;
        for (std::size_t r = 0; r < hits.size(); ++r)
            if (hits[r].doc_id == d) {
                o.rank = r + 1;
                break;
            }
    });

    std::vector<metrics::Rank> all;
    std::map<corpus::Domain, std::vector<metrics::Rank>> by_domain;
    for (const auto& o : report.outcomes) {
        all.push_back(o.rank);
        by_domain[pool.domains.at(o.doc_id)].push_back(o.rank);
    }
    for (const auto& [domain, ranks] : by_domain)
        report.rows.push_back(aggregate(std::string(corpus::to_string(domain)), ranks));
    report.rows.push_back(aggregate("all", all));
    return report;
}

nlohmann::ordered_json report_to_json(const EvalReport& report) {
    nlohmann::ordered_json j;
    j["method"] = report.method;
    j["train_domain"] = report.train_domain;
    j["protocol"] = to_string(report.protocol);
    j["pool_size"] = report.pool_size;
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& r : report.rows) {
        nlohmann::ordered_json row;
        row["group"] = r.group;
        put_metrics(row, r);
        j["rows"].push_back(std::move(row));
    }
    j["queries"] = nlohmann::ordered_json::array();
    for (const auto& o : report.outcomes) {
        nlohmann::ordered_json q;
        q["query_id"] = o.query_id;
        q["doc_id"] = o.doc_id;
        q["rank"] = o.rank ? nlohmann::ordered_json(*o.rank) : nlohmann::ordered_json(nullptr);
        j["queries"].push_back(std::move(q));
    }
    return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
    try {
        EvalReport r;
        r.method = j.at("method").get<std::string>();
        r.train_domain = j.at("train_domain").get<std::string>();
        const auto protocol = j.at("protocol").get<std::string>();
        if (protocol == "full-collection")
            r.protocol = Protocol::full_collection;
        else if (protocol == "split-only")
            r.protocol = Protocol::split_only;
        else
            throw DataError("unknown protocol '" + protocol + "'");
        r.pool_size = j.at("pool_size").get<std::size_t>();
        for (const auto& row : j.at("rows")) {
            Row x;
            x.group = row.at("group").get<std::string>();
            x.queries = row.at("queries").get<std::size_t>();
            x.mrr10 = row.at("mrr10").get<double>();
            x.ndcg10 = row.at("ndcg10").get<double>();
            x.hit1 = row.at("hit1").get<double>();
            x.hit3 = row.at("hit3").get<double>();
            x.hit10 = row.at("hit10").get<double>();
            r.rows.push_back(std::move(x));
        }
        for (const auto& q : j.at("queries")) {
            QueryOutcome o;
            o.query_id = q.at("query_id").get<std::string>();
            o.doc_id = q.at("doc_id").get<std::string>();
            if (!q.at("rank").is_null()) {
                const auto rank = q.at("rank").get<std::size_t>();
                if (rank < 1) throw DataError("rank must be >= 1");
                o.rank = rank;
            }
            r.outcomes.push_back(std::move(o));
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed report: ") + e.what());
    }
}

std::string reports_to_csv(std::span<const EvalReport> reports) {
    std::string out = "method,train_domain,test_domain,protocol,pool_size,queries,mrr10,ndcg10,hit1,hit3,hit10\n";
    for (const auto& rep : reports)
        for (const auto& r : rep.rows) {
            out += csv_field(rep.method) + ',' + csv_field(rep.train_domain) + ',' + csv_field(r.group) + ',' +
                   std::string(to_string(rep.protocol)) + ',' + std::to_string(rep.pool_size) + ',' +
                   std::to_string(r.queries) + ',' + fixed(r.mrr10) + ',' + fixed(r.ndcg10) + ',' + fixed(r.hit1) +
                   ',' + fixed(r.hit3) + ',' + fixed(r.hit10) + '\n';
        }
    return out;
}

nlohmann::ordered_json comparison_table(std::span<const EvalReport> reports) {
    nlohmann::ordered_json j;
    j["metrics"] = {"hit1", "hit3", "mrr10", "ndcg10", "hit10"};
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& rep : reports)
        for (const auto& r : rep.rows) {
            nlohmann::ordered_json row;
            row["method"] = rep.method;
            row["train_domain"] = rep.train_domain;
            row["test_domain"] = r.group;
            put_metrics(row, r);
            j["rows"].push_back(std::move(row));
        }
    return j;
}

}  // namespace docmmir::evaluation
