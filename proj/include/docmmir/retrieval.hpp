#pragma once

/** \file retrieval.hpp
 *  \brief Cosine top-k search over fused document vectors.
 *
 * FlatIndex is exact and serves as the oracle for HnswIndex. Both store unit
 * rows in double precision, score by cosine in [-1, 1], and order hits by
 * score descending with ties broken by ascending doc id.
 *
 * Index files ("DIDX", little-endian):
 *
 *     "DIDX"  u8 version=1  u8 kind (0 flat, 1 hnsw)  u32 count  u32 dim
 *     count x { u16 id_len, id bytes }
 *     count x dim float64, row-major
 *     hnsw only:
 *       u32 M  u32 ef_construction  u32 ef_search  u64 seed  u32 entry  u32 max_level
 *       count x { u8 level, (level + 1) x { u32 n, n x u32 neighbor } }
 */

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "docmmir/embeddings.hpp"
#include "docmmir/fusion.hpp"
#include "docmmir/linalg.hpp"

namespace docmmir::retrieval {

struct Hit {
    std::string doc_id;
    double score = 0.0;
    bool operator==(const Hit&) const = default;
};

struct RankedList {
    std::string query_id;
    std::vector<Hit> hits;
    bool operator==(const RankedList&) const = default;
};

/// Score descending, then doc id ascending.
bool ranks_before(const Hit& a, const Hit& b);

class Index {
public:
    virtual ~Index() = default;

    virtual std::size_t dim() const = 0;
    virtual std::size_t size() const = 0;
    virtual const std::vector<std::string>& ids() const = 0;

    /// Top-k hits for a query vector of any positive norm. Throws ArgumentError
    /// if k < 1, on a dim mismatch, or on a zero query.
    virtual std::vector<Hit> search(std::span<const double> query, std::size_t k) const = 0;

    virtual std::string serialize() const = 0;
};

class FlatIndex final : public Index {
public:
    explicit FlatIndex(std::size_t dim);

    /// Rows of `store` normalized in store order.
    static FlatIndex build(const embeddings::EmbeddingStore& store);

    /// Normalizes and appends. Throws DataError on a zero vector or duplicate id.
    void add(std::string id, std::span<const double> v);
    /// Appends a row that is already unit length, bit for bit. Throws DataError
    /// if its norm is off by more than 1e-9.
    void add_normalized(std::string id, std::span<const double> unit);

    std::size_t dim() const override { return dim_; }
    std::size_t size() const override { return ids_.size(); }
    const std::vector<std::string>& ids() const override { return ids_; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }

    std::vector<Hit> search(std::span<const double> query, std::size_t k) const override;
    std::string serialize() const override;

private:
    std::size_t dim_;
    std::vector<std::string> ids_;
    std::vector<double> data_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct HnswParams {
    std::size_t m = 16;                ///< links per node above layer 0; layer 0 allows 2m
    std::size_t ef_construction = 200;
    std::size_t ef_search = 100;       ///< default beam for Index::search
    std::uint64_t seed = 0;
};

class HnswIndex final : public Index {
public:
    /// Inserts the rows of `base` in order. Levels come from a seeded geometric
    /// distribution with mean 1/ln(m); neighbors are chosen by the HNSW
    /// heuristic. A final pass links any node not reachable at layer 0.
    static HnswIndex build(FlatIndex base, const HnswParams& params);

    std::size_t dim() const override { return base_.dim(); }
    std::size_t size() const override { return base_.size(); }
    const std::vector<std::string>& ids() const override { return base_.ids(); }

    std::vector<Hit> search(std::span<const double> query, std::size_t k) const override;
    /// Throws ArgumentError if ef_search < k.
    std::vector<Hit> search(std::span<const double> query, std::size_t k, std::size_t ef_search) const;

    std::string serialize() const override;

    const HnswParams& params() const { return params_; }
    void set_ef_search(std::size_t ef) { params_.ef_search = ef; }
    std::size_t max_level() const { return max_level_; }
    std::size_t level_of(std::size_t node) const { return levels_[node]; }
    const std::vector<std::uint32_t>& neighbors(std::size_t node, std::size_t level) const {
        return links_[node][level];
    }
    std::size_t entry_point() const { return entry_; }

    /// Throws DataError if a neighbor cap is exceeded or some node is unreachable at layer 0.
    void check_invariants() const;

    static HnswIndex from_parts(FlatIndex base, const HnswParams& params, std::size_t entry, std::size_t max_level,
                                std::vector<std::uint8_t> levels,
                                std::vector<std::vector<std::vector<std::uint32_t>>> links);

private:
    explicit HnswIndex(FlatIndex base) : base_(std::move(base)) {}

    friend class HnswBuilder;
    friend class HnswWalker;

    FlatIndex base_;
    HnswParams params_;
    std::size_t entry_ = 0;
    std::size_t max_level_ = 0;
    std::vector<std::uint8_t> levels_;
    std::vector<std::vector<std::vector<std::uint32_t>>> links_;  // [node][level] -> neighbors
};

std::size_t max_links(const HnswParams& p, std::size_t level);

std::unique_ptr<Index> deserialize_index(std::string_view bytes);
void write_index(const Index& index, const std::string& path);
std::unique_ptr<Index> read_index(const std::string& path);

/// Fused, normalized document vectors: normalize(text), normalize(mean of
/// images), fuse. `doc_ids` empty means every id of the text store.
FlatIndex index_documents(const embeddings::EmbeddingStore& text, const embeddings::EmbeddingStore& image,
                          const fusion::FusionParams& params, const std::vector<std::string>& doc_ids = {});

/// Searches every query of the store, in store order, using up to `threads` workers.
std::vector<RankedList> search_all(const Index& index, const embeddings::EmbeddingStore& queries, std::size_t k,
                                   std::size_t threads = 1);

/// One {"query_id", "hits": [{"doc_id", "score"}]} object per line.
std::string results_to_jsonl(const std::vector<RankedList>& results);
std::vector<RankedList> results_from_jsonl(std::string_view text);

}  // namespace docmmir::retrieval
