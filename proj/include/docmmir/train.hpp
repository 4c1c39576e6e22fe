#pragma once

// Fusion-head training over frozen embeddings.
//
// Each (query, document) pair is one row of a batch. The loss compares the
// B x B cosine matrix S[i][j] = cos(query_i, fuse(text_j, image_j)) against
// the identity: symmetric weighted BCE on sigmoid(scale * S + bias), or
// symmetric InfoNCE on S / temperature. Optimization is AdamW with decoupled
// weight decay on the MLP matrices, linear warmup, then cosine decay to 0.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "docmmir/corpus.hpp"
#include "docmmir/embeddings.hpp"
#include "docmmir/fusion.hpp"
#include "docmmir/linalg.hpp"

namespace docmmir::train {

enum class Loss { bce, infonce };

std::string_view to_string(Loss l);
Loss parse_loss(std::string_view s);

struct TrainConfig {
    Loss loss = Loss::bce;
    fusion::Mode mode = fusion::Mode::weighted_sum;
    std::size_t hidden = 0;  ///< MLP width; 0 means the embedding dim

    std::size_t batch_size = 32;
    double lr = 1e-2;
    double weight_decay = 0.01;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double warmup_frac = 0.1;
    std::size_t max_epochs = 200;
    std::size_t patience_epochs = 20;

    std::optional<double> pos_weight;  ///< unset: B - 1 per batch (1 when B = 1)
    double temperature = 0.07;

    double alpha_init = 0.5;
    double logit_scale_init = fusion::kDefaultLogitScale;
    double logit_bias_init = fusion::kDefaultLogitBias;
    bool freeze_logit = false;  ///< keep scale and bias at their initial values

    std::uint64_t seed = 0;

    /// Throws ArgumentError on out-of-range values.
    void validate() const;

    nlohmann::json to_json() const;
    /// Missing keys keep their defaults; unknown keys are an ArgumentError.
    static TrainConfig from_json(const nlohmann::json& j);
    /// Overlays the keys present in `j` onto this config.
    void merge_json(const nlohmann::json& j);
};

/// Row i of every matrix belongs to the same (query, document) pair.
struct TrainingBatch {
    Matrix query;
    Matrix text;
    Matrix image;
    std::vector<std::string> doc_ids;

    std::size_t size() const { return doc_ids.size(); }
    void validate() const;
};

/// S[i][j] = cos(query_i, fuse(text_j, image_j)).
Matrix similarity_matrix(const TrainingBatch& batch, const fusion::FusionParams& params);

/// Mean of pos_weight-weighted BCE over both orientations of S against the identity.
double bce_loss(const Matrix& s, double scale, double bias, double pos_weight);

/// Mean of row-wise and column-wise softmax cross-entropy of S / temperature against the identity.
double infonce_loss(const Matrix& s, double temperature);

double default_pos_weight(std::size_t batch_size);

struct LossAndGrad {
    double loss = 0.0;
    Vector grad;  ///< laid out like FusionParams::pack()
};

/// Loss of the configured objective and its exact gradient. With freeze_logit
/// the scale and bias entries are zero.
LossAndGrad loss_grad(const TrainingBatch& batch, const fusion::FusionParams& params, const TrainConfig& config);

double loss_value(const TrainingBatch& batch, const fusion::FusionParams& params, const TrainConfig& config);

// ---------------------------------------------------------------------------
// Data

struct Pair {
    std::string query_id;
    std::string doc_id;
};

/// One pair per query of the document, ids "docid@qK".
std::vector<Pair> multi_query_pairing(const corpus::Document& doc);

/// Aligned, unit-normalized vectors for one split.
struct Dataset {
    std::vector<std::string> doc_ids;
    Matrix text;   ///< one row per doc
    Matrix image;  ///< mean-pooled, then normalized
    std::vector<std::string> query_ids;
    Matrix query;                         ///< one row per query
    std::vector<std::size_t> query_doc;   ///< row of the paired document

    std::size_t dim() const { return text.cols; }
    std::size_t num_docs() const { return doc_ids.size(); }
    std::size_t num_queries() const { return query_ids.size(); }

    TrainingBatch batch(std::span<const std::size_t> query_rows) const;
};

/// Builds a Dataset for `doc_ids`. Throws DataError naming every document that
/// lacks a text vector, an image group, or at least one query vector.
Dataset build_dataset(const std::vector<std::string>& doc_ids, const embeddings::EmbeddingStore& text,
                      const embeddings::EmbeddingStore& image, const embeddings::EmbeddingStore& query);

/// Document ids of a corpus, in file order.
std::vector<std::string> doc_ids_of(const corpus::Corpus& c);

/// Splits query rows into batches of at most batch_size in seeded random
/// order. No batch holds two queries of the same document.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& query_doc, std::size_t batch_size,
                                                   Rng& rng);

/// Rank of each query's document among all documents of the dataset (ties
/// broken by ascending doc id).
std::vector<std::size_t> rank_within(const Dataset& data, const fusion::FusionParams& params);

double validation_mrr10(const Dataset& data, const fusion::FusionParams& params);

/// Learning rate at 0-based step of total_steps.
double scheduled_lr(const TrainConfig& config, std::size_t step, std::size_t total_steps);

// ---------------------------------------------------------------------------
// Training loop

struct StepRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double loss = 0.0;
    double lr = 0.0;
    bool operator==(const StepRecord&) const = default;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;  ///< mean over the epoch's steps
    double val_loss = 0.0;
    double val_mrr10 = 0.0;
    bool operator==(const EpochRecord&) const = default;
};

struct TrainLog {
    std::string loss;
    std::string mode;
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_val_mrr10 = 0.0;
    bool early_stopped = false;

    /// First line describes the run, then one line per step and per epoch.
    std::string to_jsonl() const;
    bool operator==(const TrainLog&) const = default;
};

struct TrainResult {
    fusion::FusionParams params;  ///< the best-validation checkpoint
    TrainLog log;
};

/// Initial parameters for a config and embedding dim.
fusion::FusionParams initial_params(const TrainConfig& config, std::size_t dim);

/// Runs AdamW until max_epochs or patience_epochs without improvement. An
/// epoch improves on the best so far when its validation MRR@10 is higher, or
/// equal with a lower validation loss. Throws Error on a non-finite loss.
TrainResult train(const Dataset& train_set, const Dataset& valid_set, const TrainConfig& config);

}  // namespace docmmir::train
