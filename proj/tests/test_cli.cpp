#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "docmmir/binary_io.hpp"
#include "docmmir/cli.hpp"
#include "docmmir/evaluation.hpp"
#include "docmmir/fusion.hpp"
#include "docmmir/synthetic.hpp"

using namespace docmmir;
namespace fs = std::filesystem;

namespace {

const std::string kFixture = std::string(DOCMMIR_FIXTURES) + "/corpus/curate20.jsonl";

struct Run {
    int code;
    std::string out, err;
};

Run run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("docmmir_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }
    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    // Writes a separable corpus: three splits and the three stores.
    synthetic::SeparableCorpus write_separable(std::size_t num_docs = 200, double test_frac = 0.0) {
        synthetic::SeparableSpec spec;
        spec.num_docs = num_docs;
        spec.test_frac = test_frac;
        spec.seed = 3;
        auto s = synthetic::make_separable(spec);
        io::write_file_atomic(path("train.jsonl"), corpus::to_jsonl(s.train.docs));
        io::write_file_atomic(path("valid.jsonl"), corpus::to_jsonl(s.valid.docs));
        io::write_file_atomic(path("test.jsonl"), corpus::to_jsonl(s.test.docs));
        embeddings::write_store(s.text, path("text.demb"));
        embeddings::write_store(s.image, path("image.demb"));
        embeddings::write_store(s.query, path("query.demb"));
        io::write_file_atomic(path("train.json"),
                              R"({"batch_size": 16, "lr": 0.1, "freeze_logit": true, "logit_scale_init": 1.0,
                                  "logit_bias_init": 0.0, "max_epochs": 200, "patience_epochs": 20})");
        return s;
    }

    std::vector<std::string> train_args(const std::string& ckpt) const {
        return {"train",           "--corpus",    path("train.jsonl"), "--valid-corpus", path("valid.jsonl"),
                "--text-emb",      path("text.demb"), "--img-emb",  path("image.demb"), "--query-emb",
                path("query.demb"), "--config",   path("train.json"), "--out-ckpt", ckpt, "--seed", "7"};
    }

    fs::path dir_;
};

nlohmann::json without_timestamps(nlohmann::json j) {
    j.erase("started_at");
    j.erase("finished_at");
    return j;
}

nlohmann::json read_json(const std::string& p) { return nlohmann::json::parse(io::read_file(p)); }

}  // namespace

TEST_F(CliTest, CurateFixtureIsDeterministicAndAudited) {
    const auto a = run({"curate", "--in", kFixture, "--out", path("a.jsonl"), "--threads", "1"});
    ASSERT_EQ(a.code, 0) << a.err;
    EXPECT_EQ(a.out, "accepted 16, rejected 4\n");
    const auto rejects = io::read_file(path("a.jsonl.rejects.jsonl"));
    for (const auto* expect : {R"("id":"wiki-05","rule":"images")", R"("id":"wiki-09","rule":"tokens")",
                               R"("id":"slide-13","rule":"garbled")", R"("id":"arxiv-17","rule":"tokens")"})
        EXPECT_NE(rejects.find(expect), std::string::npos) << expect;

    const auto manifest = read_json(path("a.jsonl.manifest.json"));
    EXPECT_EQ(manifest["command"], "curate");
    EXPECT_EQ(manifest["config"]["policy"], "defaults");
    EXPECT_EQ(manifest["outputs"].size(), 3u);
    EXPECT_TRUE(manifest["inputs"].contains(kFixture));
    EXPECT_TRUE(read_json(path("a.jsonl.stats.json")).is_object());

    // Same inputs, same bytes; the manifests differ only in timestamps.
    const auto b = run({"curate", "--in", kFixture, "--out", path("a.jsonl"), "--threads", "3"});
    ASSERT_EQ(b.code, 0);
    EXPECT_EQ(without_timestamps(read_json(path("a.jsonl.manifest.json"))), without_timestamps(manifest));

    const auto missing = run({"curate", "--in", path("nope.jsonl"), "--out", path("c.jsonl")});
    EXPECT_EQ(missing.code, 1);
    EXPECT_FALSE(fs::exists(path("c.jsonl")));
    EXPECT_FALSE(fs::exists(path("c.jsonl.rejects.jsonl")));

    io::write_file_atomic(path("policy.json"), R"({"min_tokens": 5})");
    const auto lenient = run({"curate", "--in", kFixture, "--out", path("d.jsonl"), "--policy", path("policy.json")});
    ASSERT_EQ(lenient.code, 0);
    EXPECT_EQ(read_json(path("d.jsonl.manifest.json"))["config"]["policy"], path("policy.json"));
}

TEST_F(CliTest, CurateJudgeGateUsesEndpoint) {
    httplib::Server server;
    server.Post("/v1/chat/completions", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"choices":[{"message":{"content":"No"}}]})", "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    ::setenv("DOCMMIR_LLM_MODEL", "judge", 1);

    const auto r = run({"curate", "--in", kFixture, "--out", path("j.jsonl"), "--judge-endpoint",
                        "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions"});
    server.stop();
    th.join();
    ::unsetenv("DOCMMIR_LLM_MODEL");
    ASSERT_EQ(r.code, 0) << r.err;

    const auto accepted = corpus::load_corpus(path("j.jsonl"), corpus::Split::train);
    std::size_t judged = 0;
    for (const auto& d : accepted.docs) EXPECT_NE(d.domain, corpus::Domain::slide);
    const auto rejects = io::read_file(path("j.jsonl.rejects.jsonl"));
    for (std::size_t pos = 0; (pos = rejects.find(R"("rule":"judge")", pos)) != std::string::npos; ++pos) ++judged;
    EXPECT_GT(judged, 0u);
    const auto audit = io::read_file(path("j.jsonl.audit.jsonl"));
    EXPECT_EQ(static_cast<std::size_t>(std::count(audit.begin(), audit.end(), '\n')), judged);
}

TEST_F(CliTest, TrainOnSeparableFixture) {
    write_separable();
    const auto r = run(train_args(path("model.ckpt")));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto log = io::read_file(path("model.ckpt.log.jsonl"));
    const auto best = nlohmann::json::parse(log.substr(log.rfind('\n', log.size() - 2) + 1));
    EXPECT_EQ(best["type"], "best");
    EXPECT_GE(best["val_mrr10"].get<double>(), 0.95);
    EXPECT_NE(r.out.find("best val MRR@10"), std::string::npos);
    const auto params = fusion::load_checkpoint(path("model.ckpt"));
    EXPECT_GE(params.alpha(), 0.9);

    // Bit-reproducible for a fixed seed.
    ASSERT_EQ(run(train_args(path("again.ckpt"))).code, 0);
    EXPECT_EQ(io::read_file(path("again.ckpt")), io::read_file(path("model.ckpt")));
    EXPECT_EQ(io::read_file(path("again.ckpt.log.jsonl")), log);

    auto args = train_args(path("nce.ckpt"));
    args.insert(args.end(), {"--loss", "infonce", "--max-epochs", "3"});
    ASSERT_EQ(run(args).code, 0);
    const auto nce_log = io::read_file(path("nce.ckpt.log.jsonl"));
    EXPECT_EQ(nlohmann::json::parse(nce_log.substr(0, nce_log.find('\n')))["loss"], "infonce");
}

TEST_F(CliTest, TrainErrors) {
    auto s = write_separable(30);
    embeddings::EmbeddingStore image(s.image.dim(), embeddings::Kind::image);
    const std::string dropped = s.train.docs[4].id;
    for (const auto& id : s.image.ids())
        if (id.rfind(dropped + "#", 0) != 0) image.add(id, s.image.at(id));
    embeddings::write_store(image, path("image.demb"));
    const auto r = run(train_args(path("m.ckpt")));
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find(dropped), std::string::npos) << r.err;
    EXPECT_FALSE(fs::exists(path("m.ckpt")));

    io::write_file_atomic(path("train.json"), R"({"learning_rate": 0.1})");
    EXPECT_EQ(run(train_args(path("m.ckpt"))).code, 2);
    EXPECT_EQ(run({"train", "--corpus", path("train.jsonl")}).code, 2);
}

TEST_F(CliTest, IndexSearchEvalPipeline) {
    auto s = write_separable(120, 0.25);
    auto params = fusion::FusionParams::weighted_sum(s.text.dim());
    params.set_alpha(1.0);
    fusion::save_checkpoint(params, path("alpha1.ckpt"));

    // Documents as queries: every doc retrieves itself first.
    embeddings::EmbeddingStore self(s.text.dim(), embeddings::Kind::query);
    for (const auto& id : s.text.ids()) self.add(id, s.text.at(id));
    embeddings::write_store(self, path("self.demb"));
    for (const std::string kind : {"flat", "hnsw"}) {
        const auto idx = path(kind + ".didx");
        const auto r = run({"index", "--text-emb", path("text.demb"), "--img-emb", path("image.demb"), "--ckpt",
                            path("alpha1.ckpt"), "--kind", kind, "--m", "8", "--seed", "5", "--out", idx});
        ASSERT_EQ(r.code, 0) << r.err;
        EXPECT_EQ(r.out, "indexed 120 documents (" + kind + ")\n");
        const auto sr = run({"search", "--index", idx, "--queries", path("self.demb"), "--k", "3", "--threads", "2"});
        ASSERT_EQ(sr.code, 0) << sr.err;
        const auto lists = retrieval::results_from_jsonl(sr.out);
        ASSERT_EQ(lists.size(), 120u);
        for (const auto& l : lists) EXPECT_EQ(l.hits.at(0).doc_id, l.query_id);
    }
    EXPECT_EQ(run({"search", "--index", path("flat.didx"), "--queries", path("self.demb"), "--k", "0"}).code, 2);
    EXPECT_EQ(run({"search", "--index", path("flat.didx"), "--queries", path("self.demb"), "--ef-search", "9"}).code,
              2);
    EXPECT_EQ(run({"search", "--index", path("missing.didx"), "--queries", path("self.demb")}).code, 1);

    // Full-collection evaluation equals the library call.
    const auto er = run({"eval", "--index", path("flat.didx"), "--queries", path("query.demb"), "--full-collection",
                         path("train.jsonl"), path("valid.jsonl"), path("test.jsonl"), "--method", "ws+bce", "--out",
                         path("report.json"), "--csv", path("report.csv")});
    ASSERT_EQ(er.code, 0) << er.err;
    const std::vector<corpus::Corpus> splits{s.train, s.valid, s.test};
    const auto pool = evaluation::full_collection_pool(splits);
    const auto index = retrieval::read_index(path("flat.didx"));
    auto expected = evaluation::evaluate(s.query, *index, evaluation::qrels_from_corpus(s.test), pool);
    expected.method = "ws+bce";
    EXPECT_EQ(read_json(path("report.json")), nlohmann::json::parse(evaluation::report_to_json(expected).dump()));
    EXPECT_EQ(expected.pool_size, 120u);
    EXPECT_EQ(io::read_file(path("report.csv")), evaluation::reports_to_csv(std::span(&expected, 1)));

    // Split-only pool needs an index over the test split alone.
    const auto test_idx = path("test.didx");
    ASSERT_EQ(run({"index", "--text-emb", path("text.demb"), "--img-emb", path("image.demb"), "--ckpt",
                   path("alpha1.ckpt"), "--kind", "flat", "--corpus", path("test.jsonl"), "--out", test_idx})
                  .code,
              0);
    const auto split_only = run({"eval", "--index", test_idx, "--queries", path("query.demb"), "--test-corpus",
                                 path("test.jsonl"), "--out", path("split.json")});
    ASSERT_EQ(split_only.code, 0) << split_only.err;
    EXPECT_EQ(read_json(path("split.json"))["protocol"], "split-only");
    EXPECT_EQ(read_json(path("split.json"))["pool_size"], s.test.docs.size());
    EXPECT_EQ(run({"eval", "--index", test_idx, "--queries", path("query.demb"), "--full-collection",
                   path("train.jsonl"), path("valid.jsonl"), path("test.jsonl")})
                  .code,
              1);
    EXPECT_EQ(run({"eval", "--index", test_idx, "--queries", path("query.demb")}).code, 2);

    const auto tr = run({"table", "--reports", path("report.json"), path("split.json"), "--out", path("table.json"),
                         "--csv", path("table.csv")});
    ASSERT_EQ(tr.code, 0) << tr.err;
    EXPECT_NE(tr.out.find("HIT@1   HIT@3   MRR@10  NDCG@10"), std::string::npos);
    EXPECT_EQ(read_json(path("table.json"))["rows"].size(),
              expected.rows.size() + read_json(path("split.json"))["rows"].size());
}

TEST_F(CliTest, ImportExportRoundTrip) {
    io::write_file_atomic(path("q.txt"), "# two queries\nd1@q0 0.6 0.8\nd2@q0 1 0\n");
    const auto r = run({"import", "--in", path("q.txt"), "--out", path("q.demb"), "--kind", "query", "--normalized"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out, "imported 2 vectors of dim 2\n");
    ASSERT_EQ(run({"export", "--in", path("q.demb"), "--out", path("back.txt")}).code, 0);
    const auto back = embeddings::import_text_file(path("back.txt"), embeddings::Kind::query, true);
    EXPECT_EQ(embeddings::serialize_store(back), embeddings::serialize_store(embeddings::read_store(path("q.demb"))));

    io::write_file_atomic(path("bad.txt"), "d1@q0 3 4\n");
    EXPECT_EQ(run({"import", "--in", path("bad.txt"), "--out", path("b.demb"), "--kind", "query", "--normalized"}).code,
              1);
    EXPECT_EQ(run({"import", "--in", path("q.txt"), "--out", path("b.demb"), "--kind", "audio"}).code, 2);
    EXPECT_EQ(run({"frobnicate"}).code, 2);
    EXPECT_EQ(run({}).code, 2);
    EXPECT_EQ(run({"--version"}).code, 0);
}
