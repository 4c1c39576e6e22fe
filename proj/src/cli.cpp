#include "docmmir/cli.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "docmmir/annotate.hpp"
#include "docmmir/binary_io.hpp"
#include "docmmir/corpus.hpp"
#include "docmmir/embeddings.hpp"
#include "docmmir/error.hpp"
#include "docmmir/evaluation.hpp"
#include "docmmir/fusion.hpp"
#include "docmmir/hash.hpp"
#include "docmmir/retrieval.hpp"
#include "docmmir/timestamp.hpp"
#include "docmmir/tokenizer.hpp"
#include "docmmir/train.hpp"

namespace docmmir::cli {

namespace {

using Json = nlohmann::ordered_json;

std::size_t default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

std::string fixed(double x, int digits = 4) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", digits, x);
    return buf;
}

corpus::Split split_or_throw(const std::string& s) {
    const auto split = corpus::parse_split(s);
    if (!split) throw ArgumentError("unknown split '" + s + "'");
    return *split;
}

corpus::Corpus load_checked(Manifest& m, const std::string& path, corpus::Split split, std::ostream& err) {
    m.add_input(path);
    auto c = corpus::load_corpus(path, split);
    for (const auto& w : c.warnings) err << "warning: " << path << ": " << w << "\n";
    if (!c.rejects.empty())
        throw DataError(path + ": " + std::to_string(c.rejects.size()) + " malformed line(s), first: " +
                        c.rejects.front().detail);
    return c;
}

embeddings::EmbeddingStore load_store(Manifest& m, const std::string& path) {
    m.add_input(path);
    return embeddings::read_store(path);
}

void finish(Manifest& m, const std::string& primary_output) {
    m.finished_at = std::chrono::system_clock::now();
    io::write_file_atomic(primary_output + ".manifest.json", m.to_json().dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// curate

struct CurateArgs {
    std::string in, out, policy, rejects, stats, tokenizer = "whitespace", split = "train";
    std::string judge_endpoint, query_endpoint, audit, image_root;
    bool strict = false;
    std::size_t in_flight = 4, threads = default_threads();
    std::uint64_t seed = 0;
};

void cmd_curate(const CurateArgs& a, std::ostream& out, std::ostream& err) {
    Manifest m;
    m.command = "curate";
    m.seed = a.seed;
    const auto split = split_or_throw(a.split);

    m.add_input(a.in);
    auto loaded = corpus::load_corpus(a.in, split, {a.strict});
    for (const auto& w : loaded.warnings) err << "warning: " << w << "\n";

    corpus::PolicySet policies;
    if (!a.policy.empty()) {
        m.add_input(a.policy);
        try {
            policies = corpus::PolicySet::from_json(nlohmann::json::parse(io::read_file(a.policy)));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(a.policy + ": " + e.what());
        }
    }
    const auto tokenizer = load_tokenizer(a.tokenizer);
    if (a.tokenizer != "whitespace") m.add_input(a.tokenizer);

    auto filtered = corpus::filter_corpus(loaded.docs, policies, tokenizer, static_cast<unsigned>(a.threads));
    for (const auto& w : filtered.warnings) err << "warning: " << w << "\n";
    std::vector<corpus::Reject> rejects = loaded.rejects;
    rejects.insert(rejects.end(), filtered.rejects.begin(), filtered.rejects.end());
    auto accepted = std::move(filtered.accepted);

    const std::string audit_path = a.audit.empty() ? a.out + ".audit.jsonl" : a.audit;
    std::ostringstream audit_buf;
    annotate::AuditLog audit(audit_buf);
    const bool uses_llm = !a.judge_endpoint.empty() || !a.query_endpoint.empty();
    auto transport_for = [](const std::string& endpoint) {
        return annotate::HttpTransport(annotate::HttpTransport::Config::from_env(endpoint));
    };
    if (!a.judge_endpoint.empty()) {
        auto http = transport_for(a.judge_endpoint);
        annotate::Client client{http};
        client.audit = &audit;
        auto gate = annotate::apply_judge_gate(accepted, annotate::JudgeGate{}, client, a.in_flight);
        for (const auto& w : gate.warnings) err << "warning: " << w << "\n";
        accepted = std::move(gate.accepted);
        rejects.insert(rejects.end(), gate.rejects.begin(), gate.rejects.end());
    }
    if (!a.query_endpoint.empty()) {
        auto http = transport_for(a.query_endpoint);
        annotate::Client client{http};
        client.audit = &audit;
        client.prompt_options.image_root = a.image_root;
        std::vector<corpus::Document> need;
        for (const auto& d : accepted)
            if (d.queries.empty()) need.push_back(d);
        const auto results = annotate::generate_queries(need, client, a.in_flight);
        std::map<std::string, const annotate::QueryResult*> by_id;
        for (const auto& r : results) by_id[r.doc_id] = &r;
        std::vector<corpus::Document> kept;
        for (auto& d : accepted) {
            const auto it = by_id.find(d.id);
            if (it == by_id.end()) {
                kept.push_back(std::move(d));
            } else if (it->second->query) {
                d.queries.push_back(*it->second->query);
                kept.push_back(std::move(d));
            } else {
                rejects.push_back({d.id, "query", it->second->error});
            }
        }
        accepted = std::move(kept);
    }

    const auto stats = accepted.empty() ? corpus::CorpusStats{} : corpus::compute_stats(accepted, tokenizer, split);
    const std::string rejects_path = a.rejects.empty() ? a.out + ".rejects.jsonl" : a.rejects;
    const std::string stats_path = a.stats.empty() ? a.out + ".stats.json" : a.stats;

    m.config = {{"in", a.in},
                {"out", a.out},
                {"split", a.split},
                {"strict", a.strict},
                {"policy", a.policy.empty() ? Json("defaults") : Json(a.policy)},
                {"policies", policies.to_json()},
                {"tokenizer", a.tokenizer},
                {"judge_endpoint", a.judge_endpoint},
                {"query_endpoint", a.query_endpoint}};
    m.write_output(a.out, corpus::to_jsonl(accepted));
    m.write_output(rejects_path, corpus::rejects_to_jsonl(rejects));
    m.write_output(stats_path, stats.to_json().dump(2) + "\n");
    if (uses_llm) m.write_output(audit_path, audit_buf.str());
    finish(m, a.out);
    out << "accepted " << accepted.size() << ", rejected " << rejects.size() << "\n";
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string corpus, valid_corpus, text_emb, img_emb, query_emb, config, out_ckpt, log;
    std::optional<std::string> loss, mode;
    std::optional<std::size_t> max_epochs, patience, batch_size;
    std::optional<double> lr;
    std::optional<std::uint64_t> seed;
};

void cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    Manifest m;
    m.command = "train";
    train::TrainConfig cfg;
    if (!a.config.empty()) {
        m.add_input(a.config);
        try {
            cfg = train::TrainConfig::from_json(nlohmann::json::parse(io::read_file(a.config)));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(a.config + ": " + e.what());
        }
    }
    if (a.loss) cfg.loss = train::parse_loss(*a.loss);
    if (a.mode) cfg.mode = fusion::parse_mode(*a.mode);
    if (a.max_epochs) cfg.max_epochs = *a.max_epochs;
    if (a.patience) cfg.patience_epochs = *a.patience;
    if (a.batch_size) cfg.batch_size = *a.batch_size;
    if (a.lr) cfg.lr = *a.lr;
    if (a.seed) cfg.seed = *a.seed;
    cfg.validate();
    m.seed = cfg.seed;

    const auto train_corpus = load_checked(m, a.corpus, corpus::Split::train, err);
    std::optional<corpus::Corpus> valid_corpus;
    if (!a.valid_corpus.empty()) valid_corpus = load_checked(m, a.valid_corpus, corpus::Split::valid, err);
    const auto text = load_store(m, a.text_emb);
    const auto image = load_store(m, a.img_emb);
    const auto query = load_store(m, a.query_emb);

    const auto train_set = train::build_dataset(train::doc_ids_of(train_corpus), text, image, query);
    if (!valid_corpus) err << "warning: no --valid-corpus; validating on the training corpus\n";
    const auto valid_set =
        valid_corpus ? train::build_dataset(train::doc_ids_of(*valid_corpus), text, image, query) : train_set;

    const auto result = train::train(train_set, valid_set, cfg);
    m.config = {{"corpus", a.corpus}, {"valid_corpus", a.valid_corpus}, {"train", cfg.to_json()}};
    m.write_output(a.out_ckpt, fusion::serialize_checkpoint(result.params, {{"train", cfg.to_json()}}));
    m.write_output(a.log.empty() ? a.out_ckpt + ".log.jsonl" : a.log, result.log.to_jsonl());
    finish(m, a.out_ckpt);

    out << "loss " << result.log.loss << ", mode " << result.log.mode << ", epochs " << result.log.epochs.size()
        << (result.log.early_stopped ? " (early stop)" : "") << "\n";
    out << "best val MRR@10 " << fixed(result.log.best_val_mrr10, 6) << " at epoch " << result.log.best_epoch << "\n";
    if (result.params.mode == fusion::Mode::weighted_sum) out << "alpha " << fixed(result.params.alpha(), 6) << "\n";
}

// ---------------------------------------------------------------------------
// index / search

struct IndexArgs {
    std::string text_emb, img_emb, ckpt, kind = "hnsw", out;
    std::vector<std::string> corpora;
    retrieval::HnswParams hnsw;
};

void cmd_index(const IndexArgs& a, std::ostream& out, std::ostream& err) {
    Manifest m;
    m.command = "index";
    m.seed = a.hnsw.seed;
    if (a.kind != "flat" && a.kind != "hnsw") throw ArgumentError("--kind must be flat or hnsw");
    const auto text = load_store(m, a.text_emb);
    const auto image = load_store(m, a.img_emb);
    m.add_input(a.ckpt);
    const auto params = fusion::load_checkpoint(a.ckpt);
    std::vector<std::string> ids;
    for (const auto& path : a.corpora) {
        const auto c = load_checked(m, path, corpus::Split::test, err);
        for (const auto& d : c.docs) ids.push_back(d.id);
    }
    auto flat = retrieval::index_documents(text, image, params, ids);
    m.config = {{"kind", a.kind},
                {"corpora", a.corpora},
                {"m", a.hnsw.m},
                {"ef_construction", a.hnsw.ef_construction},
                {"ef_search", a.hnsw.ef_search}};
    const auto count = flat.size();
    if (a.kind == "flat")
        m.write_output(a.out, flat.serialize());
    else
        m.write_output(a.out, retrieval::HnswIndex::build(std::move(flat), a.hnsw).serialize());
    finish(m, a.out);
    out << "indexed " << count << " documents (" << a.kind << ")\n";
}

struct SearchArgs {
    std::string index, queries, out;
    std::size_t k = 10;
    std::optional<std::size_t> ef_search;
    std::size_t threads = default_threads();
};

void with_ef(std::unique_ptr<retrieval::Index>& index, std::optional<std::size_t> ef) {
    if (!ef) return;
    auto* g = dynamic_cast<retrieval::HnswIndex*>(index.get());
    if (!g) throw ArgumentError("--ef-search applies to hnsw indexes only");
    g->set_ef_search(*ef);
}

void cmd_search(const SearchArgs& a, std::ostream& out, std::ostream&) {
    if (a.k < 1) throw ArgumentError("--k must be >= 1");
    Manifest m;
    m.command = "search";
    m.add_input(a.index);
    auto index = retrieval::read_index(a.index);
    with_ef(index, a.ef_search);
    const auto queries = load_store(m, a.queries);
    const auto jsonl = retrieval::results_to_jsonl(retrieval::search_all(*index, queries, a.k, a.threads));
    if (a.out.empty()) {
        out << jsonl;
        return;
    }
    m.config = {{"k", a.k}, {"ef_search", a.ef_search ? Json(*a.ef_search) : Json(nullptr)}};
    m.write_output(a.out, jsonl);
    finish(m, a.out);
}

// ---------------------------------------------------------------------------
// eval / table

struct EvalArgs {
    std::string index, queries, test_corpus, qrels, out, csv, method, train_domain;
    std::vector<std::string> full_collection;
    std::optional<std::size_t> ef_search;
    bool truncated = false;
    std::size_t threads = default_threads();
};

void cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
    Manifest m;
    m.command = "eval";
    evaluation::Pool pool;
    corpus::Corpus test;
    if (!a.full_collection.empty()) {
        if (a.full_collection.size() != 3) throw ArgumentError("--full-collection takes train, valid and test corpora");
        std::vector<corpus::Corpus> splits;
        for (std::size_t i = 0; i < 3; ++i)
            splits.push_back(load_checked(m, a.full_collection[i], static_cast<corpus::Split>(i), err));
        pool = evaluation::full_collection_pool(splits);
        test = splits[2];
    } else {
        if (a.test_corpus.empty()) throw ArgumentError("give --test-corpus or --full-collection");
        test = load_checked(m, a.test_corpus, corpus::Split::test, err);
        pool = evaluation::split_pool(test);
    }
    evaluation::QRels qrels;
    if (!a.qrels.empty()) {
        m.add_input(a.qrels);
        qrels = evaluation::read_qrels(a.qrels);
    } else {
        qrels = evaluation::qrels_from_corpus(test);
    }

    m.add_input(a.index);
    auto index = retrieval::read_index(a.index);
    with_ef(index, a.ef_search);
    const auto queries = load_store(m, a.queries);
    auto report = evaluation::evaluate(queries, *index, qrels, pool, {a.truncated, a.threads});
    report.method = a.method;
    report.train_domain = a.train_domain;

    for (const auto& r : report.rows)
        out << r.group << ": queries " << r.queries << ", MRR@10 " << fixed(r.mrr10) << ", NDCG@10 "
            << fixed(r.ndcg10) << ", HIT@1 " << fixed(r.hit1) << ", HIT@3 " << fixed(r.hit3) << ", HIT@10 "
            << fixed(r.hit10) << "\n";
    out << "pool " << report.pool_size << " (" << evaluation::to_string(report.protocol) << ")\n";
    if (a.out.empty()) return;
    m.config = {{"protocol", evaluation::to_string(report.protocol)},
                {"truncated", a.truncated},
                {"method", a.method},
                {"train_domain", a.train_domain},
                {"ef_search", a.ef_search ? Json(*a.ef_search) : Json(nullptr)}};
    m.write_output(a.out, evaluation::report_to_json(report).dump(2) + "\n");
    if (!a.csv.empty()) m.write_output(a.csv, evaluation::reports_to_csv(std::span(&report, 1)));
    finish(m, a.out);
}

struct TableArgs {
    std::vector<std::string> reports;
    std::string out, csv;
};

std::string render_table(std::span<const evaluation::EvalReport> reports) {
    std::size_t w = 6;
    for (const auto& r : reports) w = std::max(w, r.method.size());
    auto pad = [](std::string s, std::size_t n) { return s.size() >= n ? s : s + std::string(n - s.size(), ' '); };
    std::string s = pad("method", w + 2) + pad("train", 8) + pad("test", 8) + "HIT@1   HIT@3   MRR@10  NDCG@10\n";
    for (const auto& rep : reports)
        for (const auto& r : rep.rows)
            s += pad(rep.method, w + 2) + pad(rep.train_domain.empty() ? "-" : rep.train_domain, 8) +
                 pad(r.group, 8) + pad(fixed(r.hit1), 8) + pad(fixed(r.hit3), 8) + pad(fixed(r.mrr10), 8) +
                 fixed(r.ndcg10) + "\n";
    return s;
}

void cmd_table(const TableArgs& a, std::ostream& out, std::ostream&) {
    Manifest m;
    m.command = "table";
    std::vector<evaluation::EvalReport> reports;
    for (const auto& path : a.reports) {
        m.add_input(path);
        try {
            reports.push_back(evaluation::report_from_json(nlohmann::json::parse(io::read_file(path))));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ": " + e.what());
        }
    }
    out << render_table(reports);
    if (a.out.empty()) return;
    m.write_output(a.out, evaluation::comparison_table(reports).dump(2) + "\n");
    if (!a.csv.empty()) m.write_output(a.csv, evaluation::reports_to_csv(reports));
    finish(m, a.out);
}

// ---------------------------------------------------------------------------
// import / export

struct ImportArgs {
    std::string in, out, kind;
    bool normalized = false;
};

embeddings::Kind kind_or_throw(const std::string& s) {
    for (auto k : {embeddings::Kind::text, embeddings::Kind::image, embeddings::Kind::query})
        if (embeddings::to_string(k) == s) return k;
    throw ArgumentError("--kind must be text, image or query");
}

void cmd_import(const ImportArgs& a, std::ostream& out, std::ostream&) {
    Manifest m;
    m.command = "import";
    m.add_input(a.in);
    const auto store = embeddings::import_text_file(a.in, kind_or_throw(a.kind), a.normalized);
    if (a.normalized) store.validate_norms();
    m.config = {{"kind", a.kind}, {"normalized", a.normalized}};
    m.write_output(a.out, embeddings::serialize_store(store));
    finish(m, a.out);
    out << "imported " << store.size() << " vectors of dim " << store.dim() << "\n";
}

void cmd_export(const ImportArgs& a, std::ostream&, std::ostream&) {
    io::write_file_atomic(a.out, embeddings::export_text(embeddings::read_store(a.in)));
}

}  // namespace

void Manifest::add_input(const std::string& path) {
    for (const auto& [p, _] : inputs)
        if (p == path) return;
    inputs.emplace_back(path, sha256_hex(io::read_file(path)));
}

void Manifest::write_output(const std::string& path, const std::string& contents) {
    io::write_file_atomic(path, contents);
    outputs.emplace_back(path, sha256_hex(contents));
}

nlohmann::ordered_json Manifest::to_json() const {
    Json j;
    j["tool"] = "docmmir";
    j["version"] = kVersion;
    j["command"] = command;
    j["config"] = config;
    j["config_hash"] = sha256_hex(config.dump());
    j["seed"] = seed;
    j["inputs"] = Json::object();
    for (const auto& [p, h] : inputs) j["inputs"][p] = h;
    j["outputs"] = Json::object();
    for (const auto& [p, h] : outputs) j["outputs"][p] = h;
    j["started_at"] = iso8601_utc(started_at);
    j["finished_at"] = iso8601_utc(finished_at);
    return j;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Document-level multimodal retrieval engine", "docmmir"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);
    std::function<void()> action;

    CurateArgs curate;
    auto* c = app.add_subcommand("curate", "Filter a raw corpus into the unified format");
    c->add_option("--in", curate.in, "Raw corpus JSONL")->required();
    c->add_option("--out", curate.out, "Accepted documents JSONL")->required();
    c->add_option("--policy", curate.policy, "Filter policy JSON (default: built-in)");
    c->add_option("--rejects", curate.rejects, "Rejects JSONL (default: <out>.rejects.jsonl)");
    c->add_option("--stats", curate.stats, "Statistics JSON (default: <out>.stats.json)");
    c->add_option("--tokenizer", curate.tokenizer, "\"whitespace\" or a BPE rank file");
    c->add_option("--split", curate.split, "train, valid or test");
    c->add_flag("--strict", curate.strict, "Reject lines with unknown fields");
    c->add_option("--judge-endpoint", curate.judge_endpoint, "Chat completions URL for the language judge");
    c->add_option("--query-endpoint", curate.query_endpoint, "Chat completions URL for query generation");
    c->add_option("--image-root", curate.image_root, "Prefix for image references sent to the model");
    c->add_option("--audit", curate.audit, "Audit JSONL (default: <out>.audit.jsonl)");
    c->add_option("--in-flight", curate.in_flight, "Concurrent model requests")->check(CLI::PositiveNumber);
    c->add_option("--threads", curate.threads)->check(CLI::PositiveNumber);
    c->add_option("--seed", curate.seed);
    c->callback([&] { action = [&] { cmd_curate(curate, out, err); }; });

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Learn fusion parameters from precomputed embeddings");
    t->add_option("--corpus", tr.corpus, "Training corpus JSONL")->required();
    t->add_option("--valid-corpus", tr.valid_corpus, "Validation corpus JSONL");
    t->add_option("--text-emb", tr.text_emb)->required();
    t->add_option("--img-emb", tr.img_emb)->required();
    t->add_option("--query-emb", tr.query_emb)->required();
    t->add_option("--config", tr.config, "Training config JSON");
    t->add_option("--out-ckpt", tr.out_ckpt)->required();
    t->add_option("--log", tr.log, "Training log JSONL (default: <out-ckpt>.log.jsonl)");
    t->add_option("--loss", tr.loss, "bce or infonce");
    t->add_option("--mode", tr.mode, "weighted_sum or mlp");
    t->add_option("--max-epochs", tr.max_epochs);
    t->add_option("--patience", tr.patience);
    t->add_option("--batch-size", tr.batch_size);
    t->add_option("--lr", tr.lr);
    t->add_option("--seed", tr.seed);
    t->callback([&] { action = [&] { cmd_train(tr, out, err); }; });

    IndexArgs ix;
    auto* i = app.add_subcommand("index", "Fuse document embeddings and build a search index");
    i->add_option("--text-emb", ix.text_emb)->required();
    i->add_option("--img-emb", ix.img_emb)->required();
    i->add_option("--ckpt", ix.ckpt, "Fusion checkpoint")->required();
    i->add_option("--corpus", ix.corpora, "Restrict to the documents of these corpora, in order");
    i->add_option("--kind", ix.kind, "flat or hnsw");
    i->add_option("--m", ix.hnsw.m)->check(CLI::PositiveNumber);
    i->add_option("--ef-construction", ix.hnsw.ef_construction)->check(CLI::PositiveNumber);
    i->add_option("--ef-search", ix.hnsw.ef_search)->check(CLI::PositiveNumber);
    i->add_option("--seed", ix.hnsw.seed);
    i->add_option("--out", ix.out)->required();
    i->callback([&] { action = [&] { cmd_index(ix, out, err); }; });

    SearchArgs se;
    auto* s = app.add_subcommand("search", "Rank documents for every query of a store");
    s->add_option("--index", se.index)->required();
    s->add_option("--queries", se.queries)->required();
    s->add_option("--k", se.k)->check(CLI::PositiveNumber);
    s->add_option("--ef-search", se.ef_search);
    s->add_option("--out", se.out, "Results JSONL (default: stdout)");
    s->add_option("--threads", se.threads)->check(CLI::PositiveNumber);
    s->callback([&] { action = [&] { cmd_search(se, out, err); }; });

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Evaluate ranking quality");
    e->add_option("--index", ev.index)->required();
    e->add_option("--queries", ev.queries)->required();
    e->add_option("--test-corpus", ev.test_corpus, "Test corpus; the pool is this split only");
    e->add_option("--full-collection", ev.full_collection, "Train, valid and test corpora; the pool is their union")
        ->expected(3);
    e->add_option("--qrels", ev.qrels, "QRels TSV (default: derived from the test corpus)");
    e->add_option("--ef-search", ev.ef_search);
    e->add_flag("--truncated", ev.truncated, "Search only the top 10");
    e->add_option("--method", ev.method);
    e->add_option("--train-domain", ev.train_domain);
    e->add_option("--out", ev.out, "Report JSON");
    e->add_option("--csv", ev.csv, "Report CSV");
    e->add_option("--threads", ev.threads)->check(CLI::PositiveNumber);
    e->callback([&] { action = [&] { cmd_eval(ev, out, err); }; });

    TableArgs tb;
    auto* b = app.add_subcommand("table", "Combine evaluation reports into one comparison table");
    b->add_option("--reports", tb.reports)->required();
    b->add_option("--out", tb.out, "Table JSON");
    b->add_option("--csv", tb.csv, "Table CSV");
    b->callback([&] { action = [&] { cmd_table(tb, out, err); }; });

    ImportArgs im;
    auto* p = app.add_subcommand("import", "Convert plain-text vectors into an embedding store");
    p->add_option("--in", im.in)->required();
    p->add_option("--out", im.out)->required();
    p->add_option("--kind", im.kind, "text, image or query")->required();
    p->add_flag("--normalized", im.normalized, "Vectors are unit length");
    p->callback([&] { action = [&] { cmd_import(im, out, err); }; });

    ImportArgs ex;
    auto* x = app.add_subcommand("export", "Write an embedding store as plain text");
    x->add_option("--in", ex.in)->required();
    x->add_option("--out", ex.out)->required();
    x->callback([&] { action = [&] { cmd_export(ex, out, err); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& pe) {
        const int code = app.exit(pe, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }
    try {
        action();
        return kExitOk;
    } catch (const ArgumentError& ae) {
        err << "usage error: " << ae.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& ex2) {
        err << "error: " << ex2.what() << "\n";
        return kExitError;
    }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv{"docmmir"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace docmmir::cli
