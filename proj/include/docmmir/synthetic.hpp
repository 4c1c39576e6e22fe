#pragma once

// Seeded toy corpora whose retrieval signal lives entirely in one modality.
//
// With signal = text, every document has a random unit text vector, images
// are independent Gaussian noise, and each query is its document's text
// vector plus N(0, noise^2) per component. signal = image mirrors this with
// the mean-pooled image vector as the source of the queries.

#include <cstdint>
#include <string>
#include <vector>

#include "docmmir/corpus.hpp"
#include "docmmir/embeddings.hpp"

namespace docmmir::synthetic {

enum class Signal { text, image };

struct SeparableSpec {
    std::size_t num_docs = 200;
    std::size_t dim = 32;
    double noise = 0.05;
    Signal signal = Signal::text;
    std::size_t max_images = 3;   ///< each doc gets 1..max_images images
    std::size_t max_queries = 1;  ///< each doc gets 1..max_queries queries
    double valid_frac = 0.2;
    double test_frac = 0.0;
    std::uint64_t seed = 0;
};

struct SeparableCorpus {
    embeddings::EmbeddingStore text{1, embeddings::Kind::text, true};
    embeddings::EmbeddingStore image{1, embeddings::Kind::image, false};
    embeddings::EmbeddingStore query{1, embeddings::Kind::query, true};
    corpus::Corpus train;
    corpus::Corpus valid;
    corpus::Corpus test;
};

SeparableCorpus make_separable(const SeparableSpec& spec);

}  // namespace docmmir::synthetic
