#pragma once

/** \file evaluation.hpp
 *  \brief Full-collection ranking evaluation with per-domain reports.
 *
 * Every query has exactly one relevant document. Ranks come from searching
 * the whole pool, so an absent rank means the document was never returned.
 *
 * QRels TSV: one "query_id<TAB>doc_id" per line; a first line of exactly
 * "query_id\tdoc_id" is treated as a header.
 */

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "docmmir/corpus.hpp"
#include "docmmir/embeddings.hpp"
#include "docmmir/metrics.hpp"
#include "docmmir/retrieval.hpp"

namespace docmmir::evaluation {

/// query_id -> relevant doc_id, iterated in query id order.
using QRels = std::map<std::string, std::string>;

/// Pairs each document with its queries, using embeddings::query_id ids.
QRels qrels_from_corpus(const corpus::Corpus& corpus);

std::string qrels_to_tsv(const QRels& qrels);
/// Throws DataError on a malformed line or a repeated query id.
QRels qrels_from_tsv(std::string_view text);
void write_qrels(const QRels& qrels, const std::string& path);
QRels read_qrels(const std::string& path);

enum class Protocol { full_collection, split_only };
std::string_view to_string(Protocol p);

struct Pool {
    Protocol protocol = Protocol::full_collection;
    std::vector<std::string> doc_ids;                 ///< split order, then file order
    std::map<std::string, corpus::Domain> domains;    ///< doc_id -> domain
    std::size_t size() const { return doc_ids.size(); }
};

/// Union of the documents of every split. Throws DataError if an id appears twice.
Pool full_collection_pool(std::span<const corpus::Corpus> splits);
/// The documents of one split only.
Pool split_pool(const corpus::Corpus& split);

struct QueryOutcome {
    std::string query_id;
    std::string doc_id;
    metrics::Rank rank;
};

struct Row {
    std::string group;  ///< a domain name, "all" or "weighted_avg"
    std::size_t queries = 0;
    double mrr10 = 0, ndcg10 = 0, hit1 = 0, hit3 = 0, hit10 = 0;
    bool operator==(const Row&) const = default;
};

Row aggregate(std::string group, std::span<const metrics::Rank> ranks);

/// Query-count weighted mean of the given rows.
Row weighted_average(std::span<const Row> rows, std::string group = "weighted_avg");

struct EvalReport {
    std::string method;        ///< free label, e.g. "weighted_sum+bce"
    std::string train_domain;  ///< empty when trained on every domain
    Protocol protocol = Protocol::full_collection;
    std::size_t pool_size = 0;
    std::vector<QueryOutcome> outcomes;  ///< query id order
    std::vector<Row> rows;               ///< non-empty domains in enum order, then "all"

    const Row& row(std::string_view group) const;
};

struct EvalOptions {
    /// Search only the top 10; ranks beyond it become absent. Metrics are unchanged.
    bool truncated = false;
    std::size_t threads = 1;
};

/// Ranks each qrels query against `index`. Throws DataError if a query or
/// relevant document is missing, on a dim mismatch, or if the index size
/// differs from the pool.
EvalReport evaluate(const embeddings::EmbeddingStore& queries, const retrieval::Index& index, const QRels& qrels,
                    const Pool& pool, EvalOptions options = {});

nlohmann::ordered_json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

/// One line per (method, train domain, group) with every metric as a column.
std::string reports_to_csv(std::span<const EvalReport> reports);

/// Method-by-domain comparison: {"metrics": [...], "rows": [{"method",
/// "train_domain", "test_domain", "queries", metric...}]}.
nlohmann::ordered_json comparison_table(std::span<const EvalReport> reports);

}  // namespace docmmir::evaluation
