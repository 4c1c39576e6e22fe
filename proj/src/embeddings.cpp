#include "docmmir/embeddings.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <optional>
#include <sstream>

#include "docmmir/binary_io.hpp"
#include "docmmir/error.hpp"

namespace docmmir::embeddings {

namespace {
constexpr std::string_view kMagic = "DEMB";
constexpr std::uint8_t kVersion = 1;
}  // namespace

std::string_view to_string(Kind k) {
    switch (k) {
        case Kind::text: return "text";
        case Kind::image: return "image";
        case Kind::query: return "query";
    }
    return "?";
}

EmbeddingStore::EmbeddingStore(std::size_t dim, Kind kind, bool normalized)
    : dim_(dim), kind_(kind), normalized_(normalized) {
    if (dim == 0) throw ArgumentError("embedding dim must be positive");
}

void EmbeddingStore::add(std::string id, std::span<const float> values) {
    if (values.size() != dim_)
        throw DataError("dim mismatch for '" + id + "': got " + std::to_string(values.size()) + ", store has " +
                        std::to_string(dim_));
    for (float v : values)
        if (!std::isfinite(v)) throw DataError("non-finite value in '" + id + "'");
    if (!index_.emplace(id, ids_.size()).second) throw DataError("duplicate id '" + id + "'");
    ids_.push_back(std::move(id));
    values_.insert(values_.end(), values.begin(), values.end());
}

void EmbeddingStore::add(std::string id, std::span<const double> values) {
    std::vector<float> f(values.begin(), values.end());
    add(std::move(id), std::span<const float>(f));
}

std::span<const float> EmbeddingStore::at(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) throw DataError("missing id '" + std::string(id) + "' in " + std::string(to_string(kind_)) + " store");
    return row(it->second);
}

Vector EmbeddingStore::row_as_double(std::size_t i) const {
    auto r = row(i);
    return Vector(r.begin(), r.end());
}

Vector EmbeddingStore::get(std::string_view id) const {
    auto r = at(id);
    return Vector(r.begin(), r.end());
}

void EmbeddingStore::validate_norms() const {
    for (std::size_t i = 0; i < size(); ++i) {
        const double n = norm(row(i));
        if (std::abs(n - 1.0) > kNormTolerance)
            throw DataError("norm violation: '" + ids_[i] + "' has L2 norm " + std::to_string(n));
    }
}

std::string serialize_store(const EmbeddingStore& store) {
    if (store.normalized()) store.validate_norms();
    if (store.size() > UINT32_MAX || store.dim() > UINT32_MAX) throw DataError("store too large for DEMB");
    io::ByteWriter w;
    w.bytes(kMagic);
    w.u8(kVersion);
    w.u8(static_cast<std::uint8_t>(store.kind()));
    w.u32(static_cast<std::uint32_t>(store.size()));
    w.u32(static_cast<std::uint32_t>(store.dim()));
    w.u8(store.normalized() ? 1 : 0);
    for (const auto& id : store.ids()) w.short_string(id);
    for (std::size_t i = 0; i < store.size(); ++i)
        for (float v : store.row(i)) w.f32(v);
    return std::move(w).take();
}

EmbeddingStore deserialize_store(std::string_view bytes) {
    io::ByteReader r(bytes);
    if (bytes.size() < kMagic.size() || r.bytes(kMagic.size()) != kMagic) throw DataError("bad magic");
    const auto version = r.u8();
    if (version != kVersion) throw DataError("unsupported DEMB version " + std::to_string(version));
    const auto kind_byte = r.u8();
    if (kind_byte > 2) throw DataError("bad store kind " + std::to_string(kind_byte));
    const auto count = r.u32();
    const auto dim = r.u32();
    const auto normalized = r.u8();
    if (dim == 0) throw DataError("zero dim");
    if (normalized > 1) throw DataError("bad normalized flag");

    std::vector<std::string> ids;
    ids.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) ids.push_back(r.short_string());
    if (r.remaining() != static_cast<std::size_t>(count) * dim * 4) {
        if (r.remaining() < static_cast<std::size_t>(count) * dim * 4) throw DataError("truncated payload");
        throw DataError("trailing bytes after payload");
    }
    EmbeddingStore store(dim, static_cast<Kind>(kind_byte), normalized == 1);
    std::vector<float> row(dim);
    for (std::uint32_t i = 0; i < count; ++i) {
        for (auto& v : row) v = r.f32();
        store.add(std::move(ids[i]), std::span<const float>(row));
    }
    if (store.normalized()) store.validate_norms();
    return store;
}

void write_store(const EmbeddingStore& store, const std::string& path) {
    io::write_file_atomic(path, serialize_store(store));
}

EmbeddingStore read_store(const std::string& path) {
    const auto bytes = io::read_file(path);
    try {
        return deserialize_store(bytes);
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

EmbeddingStore import_text(std::string_view text, Kind kind, bool normalized) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    std::optional<EmbeddingStore> store;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream fields(line);
        std::string id;
        if (!(fields >> id) || id[0] == '#') continue;
        std::vector<double> values;
        std::string tok;
        while (fields >> tok) {
            double v = 0.0;
            auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
            if (ec != std::errc() || ptr != tok.data() + tok.size())
                throw DataError("line " + std::to_string(lineno) + ": bad number '" + tok + "'");
            values.push_back(v);
        }
        if (values.empty()) throw DataError("line " + std::to_string(lineno) + ": no values for '" + id + "'");
        if (!store) store.emplace(values.size(), kind, normalized);
        try {
            store->add(id, std::span<const double>(values));
        } catch (const DataError& e) {
            throw DataError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (!store) throw DataError("no vectors in interchange text");
    if (normalized) store->validate_norms();
    return std::move(*store);
}

EmbeddingStore import_text_file(const std::string& path, Kind kind, bool normalized) {
    return import_text(io::read_file(path), kind, normalized);
}

std::string export_text(const EmbeddingStore& store) {
    std::string out;
    char buf[32];
    for (std::size_t i = 0; i < store.size(); ++i) {
        out += store.ids()[i];
        for (float v : store.row(i)) {
            auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
            out += ' ';
            out.append(buf, ptr);
        }
        out += '\n';
    }
    return out;
}

std::map<std::string, ImageGroup> group_images(const EmbeddingStore& store) {
    std::map<std::string, std::vector<std::pair<std::size_t, std::string>>> members;
    for (const auto& id : store.ids()) {
        const auto hash = id.rfind('#');
        if (hash == std::string::npos || hash == 0 || hash + 1 == id.size())
            throw DataError("image id without '#k' suffix: '" + id + "'");
        std::size_t k = 0;
        auto [ptr, ec] = std::from_chars(id.data() + hash + 1, id.data() + id.size(), k);
        if (ec != std::errc() || ptr != id.data() + id.size()) throw DataError("bad image index in '" + id + "'");
        members[id.substr(0, hash)].emplace_back(k, id);
    }
    std::map<std::string, ImageGroup> groups;
    for (auto& [doc, list] : members) {
        std::sort(list.begin(), list.end());
        ImageGroup g{doc, {}};
        for (auto& [k, id] : list) g.member_ids.push_back(std::move(id));
        groups.emplace(doc, std::move(g));
    }
    return groups;
}

Vector mean_pool_images(const ImageGroup& group, const EmbeddingStore& store) {
    if (store.kind() != Kind::image) throw ArgumentError("mean_pool_images needs an image store");
    if (group.member_ids.empty()) throw ArgumentError("empty image group for '" + group.doc_id + "'");
    Vector mean(store.dim(), 0.0);
    for (const auto& id : group.member_ids) {
        auto v = store.at(id);
        for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += static_cast<double>(v[k]);
    }
    const double m = static_cast<double>(group.member_ids.size());
    for (auto& x : mean) x /= m;
    return mean;
}

Vector l2_normalize(std::span<const double> v) {
    const double n = norm(v);
    if (!(n > 0.0)) throw ArgumentError("cannot normalize a zero vector");
    Vector out(v.begin(), v.end());
    for (auto& x : out) x /= n;
    return out;
}

std::string image_id(std::string_view doc_id, std::size_t k) { return std::string(doc_id) + "#" + std::to_string(k); }
std::string query_id(std::string_view doc_id, std::size_t k) { return std::string(doc_id) + "@q" + std::to_string(k); }

std::string doc_of_query(std::string_view qid) {
    const auto at = qid.rfind("@q");
    return std::string(at == std::string_view::npos ? qid : qid.substr(0, at));
}

}  // namespace docmmir::embeddings
