#include "docmmir/synthetic.hpp"

#include <cmath>
#include <cstdio>

#include "docmmir/error.hpp"
#include "docmmir/random.hpp"

namespace docmmir::synthetic {

namespace {

Vector gaussian(Rng& rng, std::size_t d, double sigma = 1.0) {
    Vector v(d);
    for (auto& x : v) x = sigma * rng.normal();
    return v;
}

std::string doc_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "syn-%04zu", i);
    return buf;
}

}  // namespace

SeparableCorpus make_separable(const SeparableSpec& spec) {
    using embeddings::Kind;
    if (spec.num_docs == 0 || spec.dim == 0) throw ArgumentError("synthetic corpus needs docs and a positive dim");
    if (spec.max_images == 0 || spec.max_queries == 0) throw ArgumentError("synthetic docs need images and queries");
    if (spec.valid_frac < 0 || spec.test_frac < 0 || spec.valid_frac + spec.test_frac >= 1.0)
        throw ArgumentError("split fractions must leave room for training docs");

    Rng rng(spec.seed);
    SeparableCorpus out;
    out.text = embeddings::EmbeddingStore(spec.dim, Kind::text, true);
    out.image = embeddings::EmbeddingStore(spec.dim, Kind::image, false);
    out.query = embeddings::EmbeddingStore(spec.dim, Kind::query, true);
    out.train.split = corpus::Split::train;
    out.valid.split = corpus::Split::valid;
    out.test.split = corpus::Split::test;

    const auto n_valid = static_cast<std::size_t>(std::llround(spec.valid_frac * static_cast<double>(spec.num_docs)));
    const auto n_test = static_cast<std::size_t>(std::llround(spec.test_frac * static_cast<double>(spec.num_docs)));
    const std::size_t n_train = spec.num_docs - n_valid - n_test;

    for (std::size_t i = 0; i < spec.num_docs; ++i) {
        corpus::Document doc;
        doc.id = doc_name(i);
        doc.domain = static_cast<corpus::Domain>(i % 3);
        doc.texts = {"synthetic document " + std::to_string(i)};

        const auto text = embeddings::l2_normalize(gaussian(rng, spec.dim));
        out.text.add(doc.id, text);

        const std::size_t m = 1 + rng.below(spec.max_images);
        Vector pooled(spec.dim, 0.0);
        for (std::size_t k = 0; k < m; ++k) {
            const auto img = gaussian(rng, spec.dim, 1.0 / std::sqrt(static_cast<double>(spec.dim)));
            out.image.add(embeddings::image_id(doc.id, k), img);
            // Pool what was stored so queries match the engine's float view exactly.
            const auto stored = out.image.at(embeddings::image_id(doc.id, k));
            for (std::size_t c = 0; c < spec.dim; ++c) pooled[c] += stored[c];
            doc.images.push_back("img/" + doc.id + "_" + std::to_string(k) + ".png");
        }
        const auto source = spec.signal == Signal::text ? text : embeddings::l2_normalize(pooled);

        const std::size_t nq = 1 + rng.below(spec.max_queries);
        for (std::size_t k = 0; k < nq; ++k) {
            auto q = gaussian(rng, spec.dim, spec.noise);
            for (std::size_t c = 0; c < spec.dim; ++c) q[c] += source[c];
            out.query.add(embeddings::query_id(doc.id, k), embeddings::l2_normalize(q));
            doc.queries.push_back("query " + std::to_string(k) + " for " + doc.id);
        }

        auto& split = i < n_train ? out.train : i < n_train + n_valid ? out.valid : out.test;
        split.docs.push_back(std::move(doc));
    }
    return out;
}

}  // namespace docmmir::synthetic
