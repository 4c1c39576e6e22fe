#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "docmmir/error.hpp"
#include "docmmir/evaluation.hpp"
#include "docmmir/random.hpp"

using namespace docmmir;
using namespace docmmir::evaluation;
using metrics::Rank;

namespace {

Vector random_unit(Rng& rng, std::size_t d) {
    Vector v(d);
    for (auto& x : v) x = rng.normal();
    const double n = norm(v);
    for (auto& x : v) x /= n;
    return v;
}

corpus::Corpus make_split(corpus::Split split, const std::vector<std::string>& ids,
                          const std::vector<corpus::Domain>& domains, std::size_t queries_per_doc = 1) {
    corpus::Corpus c;
    c.split = split;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        corpus::Document d;
        d.id = ids[i];
        d.domain = domains[i % domains.size()];
        d.texts = {"t"};
        d.images = {"i.png"};
        for (std::size_t k = 0; k < queries_per_doc; ++k) d.queries.push_back("q");
        c.docs.push_back(std::move(d));
    }
    return c;
}

std::vector<std::string> names(const std::string& prefix, std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
    return out;
}

// Metric values recomputed from a full ranked list of doc ids.
struct Brute {
    double mrr = 0, ndcg = 0, hit1 = 0, hit3 = 0, hit10 = 0;
};

Brute brute_metrics(const std::vector<std::vector<std::string>>& lists, const std::vector<std::string>& relevant) {
    Brute b;
    for (std::size_t q = 0; q < lists.size(); ++q) {
        for (std::size_t pos = 0; pos < lists[q].size() && pos < 10; ++pos) {
            if (lists[q][pos] != relevant[q]) continue;
            b.mrr += 1.0 / static_cast<double>(pos + 1);
            b.ndcg += std::log(2.0) / std::log(static_cast<double>(pos + 2));
            b.hit1 += pos < 1;
            b.hit3 += pos < 3;
            b.hit10 += 1;
        }
    }
    const auto n = static_cast<double>(lists.size());
    for (double* x : {&b.mrr, &b.ndcg, &b.hit1, &b.hit3, &b.hit10}) *x /= n;
    return b;
}

// Independent ranking: cosine against every doc, full sort, ties by id.
std::vector<std::string> brute_rank(const std::vector<std::pair<std::string, Vector>>& docs, const Vector& q) {
    std::vector<std::pair<double, std::string>> scored;
    for (const auto& [id, v] : docs) {
        double qv = 0, qq = 0, vv = 0;
        for (std::size_t i = 0; i < q.size(); ++i) {
            qv += q[i] * v[i];
            qq += q[i] * q[i];
            vv += v[i] * v[i];
        }
        scored.emplace_back(qv / std::sqrt(qq * vv), id);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    std::vector<std::string> out;
    for (const auto& s : scored) out.push_back(s.second);
    return out;
}

void expect_row_invariants(const Row& r) {
    EXPECT_LE(r.hit1, r.hit3);
    EXPECT_LE(r.hit3, r.hit10);
    EXPECT_LE(r.mrr10, r.hit10 + 1e-15);
    EXPECT_LE(r.ndcg10, r.hit10 + 1e-15);
    for (double x : {r.mrr10, r.ndcg10, r.hit1, r.hit3, r.hit10}) {
        EXPECT_GE(x, 0.0);
        EXPECT_LE(x, 1.0);
    }
}

struct Fixture {
    corpus::Corpus corpus;
    std::vector<std::pair<std::string, Vector>> docs;
    embeddings::EmbeddingStore queries{1, embeddings::Kind::query};
    retrieval::FlatIndex index{1};
    QRels qrels;
};

// n docs over three domains with noisy queries; domains listed cycle over docs.
Fixture random_fixture(Rng& rng, std::size_t n, std::size_t d, double noise,
                       std::vector<corpus::Domain> domains = {corpus::Domain::wiki, corpus::Domain::arxiv,
                                                             corpus::Domain::slide}) {
    Fixture f;
    f.corpus = make_split(corpus::Split::test, names("doc", n), domains, 2);
    f.queries = embeddings::EmbeddingStore(d, embeddings::Kind::query);
    f.index = retrieval::FlatIndex(d);
    for (const auto& doc : f.corpus.docs) {
        auto v = random_unit(rng, d);
        f.docs.emplace_back(doc.id, v);
        f.index.add(doc.id, v);
        for (std::size_t k = 0; k < doc.queries.size(); ++k) {
            Vector q = v;
            for (auto& x : q) x += noise * rng.normal();
            f.queries.add(embeddings::query_id(doc.id, k), q);
        }
    }
    f.qrels = qrels_from_corpus(f.corpus);
    return f;
}

}  // namespace

TEST(Metrics, Examples) {
    const std::vector<Rank> a{1, 2, 11};
    EXPECT_DOUBLE_EQ(metrics::mrr_at_10(a), 0.5);
    const std::vector<Rank> ones(7, Rank{1});
    EXPECT_DOUBLE_EQ(metrics::mrr_at_10(ones), 1.0);
    EXPECT_DOUBLE_EQ(metrics::ndcg_at_10(ones), 1.0);
    EXPECT_DOUBLE_EQ(metrics::ndcg_at_10(std::vector<Rank>{3}), 0.5);
    EXPECT_DOUBLE_EQ(metrics::ndcg_at_10(std::vector<Rank>{11}), 0.0);
    EXPECT_DOUBLE_EQ(metrics::hit_at_k(std::vector<Rank>{1, 4}, 3), 0.5);
    EXPECT_DOUBLE_EQ(metrics::hit_at_k(std::vector<Rank>{10}, 10), 1.0);
    EXPECT_DOUBLE_EQ(metrics::hit_at_k(std::vector<Rank>{1, 2, std::nullopt, 1}, 1), 0.5);
    EXPECT_DOUBLE_EQ(metrics::mrr_at_10(std::vector<Rank>{std::nullopt}), 0.0);
    EXPECT_DOUBLE_EQ(metrics::mrr_at_10(std::vector<Rank>{}), 0.0);

    EXPECT_THROW(metrics::mrr_at_10(std::vector<Rank>{0}), ArgumentError);
    EXPECT_THROW(metrics::ndcg_at_10(std::vector<Rank>{1, 0}), ArgumentError);
    EXPECT_THROW(metrics::hit_at_k(std::vector<Rank>{0}, 3), ArgumentError);
    EXPECT_THROW(metrics::hit_at_k(std::vector<Rank>{1}, 0), ArgumentError);
}

TEST(Metrics, MatchBruteForceOverRankedLists) {
    Rng rng(41);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t nq = 1 + rng.below(30), pool = 1 + rng.below(40);
        std::vector<std::vector<std::string>> lists;
        std::vector<std::string> relevant;
        std::vector<Rank> ranks;
        for (std::size_t q = 0; q < nq; ++q) {
            auto list = names("d", pool);
            rng.shuffle(std::span<std::string>(list));
            // Sometimes the relevant document is not in the list at all.
            const bool absent = rng.below(5) == 0;
            relevant.push_back(absent ? "missing" : list[rng.below(pool)]);
            Rank r;
            for (std::size_t i = 0; i < list.size(); ++i)
                if (list[i] == relevant.back()) r = i + 1;
            ranks.push_back(r);
            lists.push_back(std::move(list));
        }
        const auto b = brute_metrics(lists, relevant);
        EXPECT_NEAR(metrics::mrr_at_10(ranks), b.mrr, 1e-12);
        EXPECT_NEAR(metrics::ndcg_at_10(ranks), b.ndcg, 1e-12);
        EXPECT_NEAR(metrics::hit_at_k(ranks, 1), b.hit1, 1e-12);
        EXPECT_NEAR(metrics::hit_at_k(ranks, 3), b.hit3, 1e-12);
        EXPECT_NEAR(metrics::hit_at_k(ranks, 10), b.hit10, 1e-12);
        expect_row_invariants(aggregate("all", ranks));
    }
}

TEST(Pool, UnionOfSplits) {
    const std::vector<corpus::Domain> wiki{corpus::Domain::wiki};
    const std::vector<corpus::Corpus> splits{make_split(corpus::Split::train, names("tr", 5), wiki),
                                             make_split(corpus::Split::valid, names("va", 2), wiki),
                                             make_split(corpus::Split::test, names("te", 3), wiki)};
    const auto pool = full_collection_pool(splits);
    EXPECT_EQ(pool.size(), 10u);
    EXPECT_EQ(pool.protocol, Protocol::full_collection);
    EXPECT_EQ(pool.doc_ids.front(), "tr0");
    EXPECT_EQ(pool.doc_ids.back(), "te2");

    auto clash = splits;
    clash[2].docs[1].id = "va1";
    EXPECT_THROW(full_collection_pool(clash), DataError);

    const auto only = split_pool(splits[2]);
    EXPECT_EQ(only.size(), 3u);
    EXPECT_EQ(only.protocol, Protocol::split_only);
    EXPECT_EQ(to_string(only.protocol), "split-only");
}

TEST(QRels, TsvRoundTripAndErrors) {
    const auto c = make_split(corpus::Split::test, names("doc", 3), {corpus::Domain::wiki}, 2);
    const auto q = qrels_from_corpus(c);
    ASSERT_EQ(q.size(), 6u);
    EXPECT_EQ(q.at("doc1@q1"), "doc1");
    const auto tsv = qrels_to_tsv(q);
    EXPECT_EQ(tsv.substr(0, tsv.find('\n')), "query_id\tdoc_id");
    EXPECT_EQ(qrels_from_tsv(tsv), q);
    EXPECT_EQ(qrels_from_tsv("a\tb\r\n\nc\td\n"), (QRels{{"a", "b"}, {"c", "d"}}));

    EXPECT_THROW(qrels_from_tsv("a b\n"), DataError);
    EXPECT_THROW(qrels_from_tsv("a\tb\tc\n"), DataError);
    EXPECT_THROW(qrels_from_tsv("\tb\n"), DataError);
    EXPECT_THROW(qrels_from_tsv("a\tb\na\tc\n"), DataError);

    const auto path = (std::filesystem::temp_directory_path() / "docmmir_eval_qrels.tsv").string();
    write_qrels(q, path);
    EXPECT_EQ(read_qrels(path), q);
    std::filesystem::remove(path);
    EXPECT_THROW(read_qrels("/nonexistent/q.tsv"), IoError);
}

TEST(Evaluate, OrthogonalConstructionIsPerfect) {
    const std::size_t d = 4;
    const auto c = make_split(corpus::Split::test, names("doc", d), {corpus::Domain::wiki, corpus::Domain::slide});
    retrieval::FlatIndex index(d);
    embeddings::EmbeddingStore queries(d, embeddings::Kind::query);
    for (std::size_t i = 0; i < d; ++i) {
        Vector e(d, 0.0);
        e[i] = 1.0;
        index.add(c.docs[i].id, e);
        queries.add(embeddings::query_id(c.docs[i].id, 0), e);
    }
    const auto report = evaluate(queries, index, qrels_from_corpus(c), split_pool(c));
    EXPECT_EQ(report.pool_size, d);
    EXPECT_EQ(report.protocol, Protocol::split_only);
    ASSERT_EQ(report.rows.size(), 3u);
    EXPECT_EQ(report.rows[0].group, "wiki");
    EXPECT_EQ(report.rows[1].group, "slide");
    EXPECT_EQ(report.rows[2].group, "all");
    for (const auto& r : report.rows) {
        EXPECT_EQ(r.mrr10, 1.0);
        EXPECT_EQ(r.ndcg10, 1.0);
        EXPECT_EQ(r.hit1, 1.0);
    }
    for (const auto& o : report.outcomes) EXPECT_EQ(o.rank, Rank{1});
}

TEST(Evaluate, MatchesBruteForceRanking) {
    Rng rng(42);
    for (int trial = 0; trial < 10; ++trial) {
        auto f = random_fixture(rng, 50, 8, 0.6);
        const auto pool = split_pool(f.corpus);
        const auto report = evaluate(f.queries, f.index, f.qrels, pool, {false, 3});

        std::vector<std::vector<std::string>> lists;
        std::vector<std::string> relevant;
        std::map<corpus::Domain, std::pair<std::vector<std::vector<std::string>>, std::vector<std::string>>> by_domain;
        for (const auto& [qid, doc] : f.qrels) {
            auto list = brute_rank(f.docs, f.queries.get(qid));
            const auto dom = pool.domains.at(doc);
            by_domain[dom].first.push_back(list);
            by_domain[dom].second.push_back(doc);
            lists.push_back(std::move(list));
            relevant.push_back(doc);
        }
        auto check = [](const Row& r, const Brute& b) {
            EXPECT_NEAR(r.mrr10, b.mrr, 1e-12);
            EXPECT_NEAR(r.ndcg10, b.ndcg, 1e-12);
            EXPECT_NEAR(r.hit1, b.hit1, 1e-12);
            EXPECT_NEAR(r.hit3, b.hit3, 1e-12);
            EXPECT_NEAR(r.hit10, b.hit10, 1e-12);
            expect_row_invariants(r);
        };
        check(report.row("all"), brute_metrics(lists, relevant));
        for (const auto& [dom, lr] : by_domain)
            check(report.row(corpus::to_string(dom)), brute_metrics(lr.first, lr.second));

        // Exact ranks: every relevant doc appears somewhere in the full pool.
        for (const auto& o : report.outcomes) ASSERT_TRUE(o.rank.has_value());

        std::vector<Row> domain_rows(report.rows.begin(), report.rows.end() - 1);
        const auto avg = weighted_average(domain_rows);
        EXPECT_EQ(avg.queries, report.row("all").queries);
        EXPECT_NEAR(avg.mrr10, report.row("all").mrr10, 1e-12);
        EXPECT_NEAR(avg.hit3, report.row("all").hit3, 1e-12);

        const auto truncated = evaluate(f.queries, f.index, f.qrels, pool, {true, 1});
        for (std::size_t i = 0; i < report.rows.size(); ++i) {
            EXPECT_NEAR(truncated.rows[i].mrr10, report.rows[i].mrr10, 1e-15);
            EXPECT_NEAR(truncated.rows[i].ndcg10, report.rows[i].ndcg10, 1e-15);
            EXPECT_EQ(truncated.rows[i].hit10, report.rows[i].hit10);
        }
    }
}

TEST(Evaluate, EmptyDomainRowIsOmitted) {
    Rng rng(43);
    auto f = random_fixture(rng, 30, 6, 0.5, {corpus::Domain::wiki, corpus::Domain::slide});
    const auto report = evaluate(f.queries, f.index, f.qrels, split_pool(f.corpus));
    ASSERT_EQ(report.rows.size(), 3u);
    EXPECT_THROW(report.row("arxiv"), ArgumentError);

    // Relabelling every document into one domain leaves the full-set row unchanged.
    auto one = f.corpus;
    for (auto& doc : one.docs) doc.domain = corpus::Domain::arxiv;
    const auto merged = evaluate(f.queries, f.index, f.qrels, split_pool(one));
    ASSERT_EQ(merged.rows.size(), 2u);
    EXPECT_EQ(merged.row("all"), report.row("all"));
    Row arxiv = merged.row("arxiv");
    arxiv.group = "all";
    EXPECT_EQ(arxiv, report.row("all"));
}

TEST(Evaluate, QueryOrderDoesNotMatter) {
    Rng rng(44);
    auto f = random_fixture(rng, 40, 8, 0.7);
    auto ids = f.queries.ids();
    rng.shuffle(std::span<std::string>(ids));
    embeddings::EmbeddingStore shuffled(f.queries.dim(), embeddings::Kind::query);
    for (const auto& id : ids) shuffled.add(id, f.queries.at(id));
    const auto pool = split_pool(f.corpus);
    const auto a = evaluate(f.queries, f.index, f.qrels, pool);
    const auto b = evaluate(shuffled, f.index, f.qrels, pool, {false, 4});
    EXPECT_EQ(a.rows, b.rows);
}

TEST(Evaluate, FlatAndFullBeamHnswAgree) {
    Rng rng(45);
    auto f = random_fixture(rng, 200, 12, 0.8);
    const auto pool = split_pool(f.corpus);
    const auto g = retrieval::HnswIndex::build(f.index, {8, 32, 16, 11});
    auto exact_g = g;
    exact_g.set_ef_search(pool.size());
    const auto flat = evaluate(f.queries, f.index, f.qrels, pool);
    const auto hnsw = evaluate(f.queries, exact_g, f.qrels, pool);
    EXPECT_EQ(report_to_json(flat), report_to_json(hnsw));
}

TEST(Evaluate, GrowingThePoolNeverImprovesRanks) {
    Rng rng(46);
    for (int trial = 0; trial < 5; ++trial) {
        auto f = random_fixture(rng, 30, 6, 0.9);
        const auto base = evaluate(f.queries, f.index, f.qrels, split_pool(f.corpus));
        auto bigger = f.corpus;
        auto index = f.index;
        for (const auto& id : names("extra", 100)) {
            corpus::Document d;
            d.id = id;
            bigger.docs.push_back(d);
            index.add(id, random_unit(rng, 6));
        }
        const auto grown = evaluate(f.queries, index, f.qrels, split_pool(bigger));
        EXPECT_EQ(grown.pool_size, 130u);
        for (std::size_t i = 0; i < base.outcomes.size(); ++i)
            EXPECT_LE(metrics::reciprocal_rank_at_10(grown.outcomes[i].rank),
                      metrics::reciprocal_rank_at_10(base.outcomes[i].rank));
        EXPECT_LE(grown.row("all").mrr10, base.row("all").mrr10);
    }
}

TEST(Evaluate, Errors) {
    Rng rng(47);
    auto f = random_fixture(rng, 10, 4, 0.1);
    const auto pool = split_pool(f.corpus);
    auto qrels = f.qrels;
    qrels["ghost@q0"] = "doc0";
    EXPECT_THROW(evaluate(f.queries, f.index, qrels, pool), DataError);
    qrels = f.qrels;
    qrels.begin()->second = "ghost";
    EXPECT_THROW(evaluate(f.queries, f.index, qrels, pool), DataError);
    embeddings::EmbeddingStore wrong(5, embeddings::Kind::query);
    EXPECT_THROW(evaluate(wrong, f.index, f.qrels, pool), DataError);
    auto smaller = f.corpus;
    smaller.docs.pop_back();
    EXPECT_THROW(evaluate(f.queries, f.index, f.qrels, split_pool(smaller)), DataError);
}

TEST(Reports, JsonCsvAndComparisonTable) {
    Rng rng(48);
    auto f = random_fixture(rng, 20, 6, 0.9);
    auto a = evaluate(f.queries, f.index, f.qrels, split_pool(f.corpus));
    a.method = "weighted_sum+bce";
    auto b = a;
    b.method = "mlp,infonce";
    b.train_domain = "wiki";

    const auto j = report_to_json(a);
    const auto back = report_from_json(nlohmann::json::parse(j.dump()));
    EXPECT_EQ(report_to_json(back), j);
    EXPECT_EQ(j["protocol"], "split-only");
    EXPECT_THROW(report_from_json(nlohmann::json::parse(R"({"method":"x"})")), DataError);

    const std::vector<EvalReport> reports{a, b};
    const auto csv = reports_to_csv(reports);
    EXPECT_EQ(csv.substr(0, csv.find('\n')),
              "method,train_domain,test_domain,protocol,pool_size,queries,mrr10,ndcg10,hit1,hit3,hit10");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), static_cast<long>(1 + a.rows.size() + b.rows.size()));
    EXPECT_NE(csv.find("\"mlp,infonce\",wiki,all,split-only,20,40,"), std::string::npos);

    const auto table = comparison_table(reports);
    EXPECT_EQ(table["rows"].size(), a.rows.size() + b.rows.size());
    EXPECT_EQ(table["rows"].back()["method"], "mlp,infonce");
    EXPECT_EQ(table["rows"].back()["test_domain"], "all");
    EXPECT_DOUBLE_EQ(table["rows"].back()["mrr10"].get<double>(), a.row("all").mrr10);
}
