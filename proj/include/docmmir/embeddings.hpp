#pragma once

/** \file embeddings.hpp
 *  \brief Id-addressed embedding matrices and the "DEMB" on-disk format.
 *
 * Layout (all integers little-endian):
 *
 *     "DEMB"  u8 version=1  u8 kind  u32 count  u32 dim  u8 normalized
 *     count x { u16 id_len, id bytes (UTF-8) }
 *     count x dim float32, row-major, in id-listing order
 *
 * Text and query stores are keyed by document id ("docid" and "docid@qK");
 * image stores use "docid#K" so that per-document groups can be recovered
 * from the ids alone.
 */

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "docmmir/linalg.hpp"

namespace docmmir::embeddings {

enum class Kind : std::uint8_t { text = 0, image = 1, query = 2 };

std::string_view to_string(Kind k);

inline constexpr double kNormTolerance = 1e-3;

class EmbeddingStore {
public:
    EmbeddingStore(std::size_t dim, Kind kind, bool normalized = false);

    /// Appends a vector. Throws DataError on a length mismatch or duplicate id.
    void add(std::string id, std::span<const float> values);
    void add(std::string id, std::span<const double> values);

    std::size_t dim() const { return dim_; }
    Kind kind() const { return kind_; }
    bool normalized() const { return normalized_; }
    std::size_t size() const { return ids_.size(); }
    bool empty() const { return ids_.empty(); }

    const std::vector<std::string>& ids() const { return ids_; }
    bool contains(std::string_view id) const { return index_.count(std::string(id)) != 0; }

    /// Throws DataError if the id is absent.
    std::span<const float> at(std::string_view id) const;
    std::span<const float> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
    Vector row_as_double(std::size_t i) const;
    Vector get(std::string_view id) const;

    /// Throws DataError on the first vector whose norm is outside 1 +/- kNormTolerance.
    void validate_norms() const;

private:
    std::size_t dim_;
    Kind kind_;
    bool normalized_;
    std::vector<std::string> ids_;
    std::vector<float> values_;
    std::unordered_map<std::string, std::size_t> index_;
};

std::string serialize_store(const EmbeddingStore& store);
EmbeddingStore deserialize_store(std::string_view bytes);

void write_store(const EmbeddingStore& store, const std::string& path);
EmbeddingStore read_store(const std::string& path);

/// Plain-text interchange: one "id v1 v2 ... vd" per line; '#' starts a comment line.
EmbeddingStore import_text(std::string_view text, Kind kind, bool normalized = false);
EmbeddingStore import_text_file(const std::string& path, Kind kind, bool normalized = false);
std::string export_text(const EmbeddingStore& store);

struct ImageGroup {
    std::string doc_id;
    std::vector<std::string> member_ids;
};

/// Groups "docid#K" ids by document, ordered by K. Ids without '#' are a DataError.
std::map<std::string, ImageGroup> group_images(const EmbeddingStore& store);

/// Elementwise mean of the member vectors, accumulated in double.
Vector mean_pool_images(const ImageGroup& group, const EmbeddingStore& store);

/// Unit-norm copy. Throws ArgumentError on a zero vector.
Vector l2_normalize(std::span<const double> v);
inline Vector l2_normalize(const Vector& v) { return l2_normalize(std::span<const double>(v)); }

/// Image id for the k-th image of a document, and query id for its k-th query.
std::string image_id(std::string_view doc_id, std::size_t k);
std::string query_id(std::string_view doc_id, std::size_t k);

/// Document id that a "docid@qK" query id belongs to (the id itself when there is no '@q').
std::string doc_of_query(std::string_view query_id);

}  // namespace docmmir::embeddings
