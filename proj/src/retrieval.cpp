#include "docmmir/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <queue>
#include <thread>

#include <nlohmann/json.hpp>

#include "docmmir/binary_io.hpp"
#include "docmmir/error.hpp"
#include "docmmir/parallel.hpp"
#include "docmmir/random.hpp"

namespace docmmir::retrieval {

namespace {

constexpr std::string_view kMagic = "DIDX";
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kKindFlat = 0;
constexpr std::uint8_t kKindHnsw = 1;

Vector unit_query(std::span<const double> q, std::size_t dim) {
    if (q.size() != dim)
        throw ArgumentError("query dim " + std::to_string(q.size()) + " does not match index dim " +
                            std::to_string(dim));
    const double n = norm(q);
    if (!(n > 0.0)) throw ArgumentError("zero query vector");
    Vector out(q.begin(), q.end());
    for (auto& x : out) x /= n;
    return out;
}

double score(std::span<const double> a, std::span<const double> b) { return std::clamp(dot(a, b), -1.0, 1.0); }

// Candidate ordering inside the graph: higher similarity first, lower node id on ties.
struct Cand {
    double sim;
    std::uint32_t node;
};
struct CloserFirst {  // max-heap on similarity
    bool operator()(const Cand& a, const Cand& b) const {
        return a.sim < b.sim || (a.sim == b.sim && a.node > b.node);
    }
};
struct FartherFirst {  // min-heap on similarity
    bool operator()(const Cand& a, const Cand& b) const {
        return a.sim > b.sim || (a.sim == b.sim && a.node < b.node);
    }
};
bool closer(const Cand& a, const Cand& b) { return CloserFirst{}(b, a); }

std::vector<Hit> top_k(std::vector<Hit> hits, std::size_t k) {
    k = std::min(k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), ranks_before);
    hits.resize(k);
    return hits;
}

void write_header(io::ByteWriter& w, std::uint8_t kind, const FlatIndex& flat) {
    if (flat.size() > UINT32_MAX || flat.dim() > UINT32_MAX) throw DataError("index too large for DIDX");
    w.bytes(kMagic);
    w.u8(kVersion);
    w.u8(kind);
    w.u32(static_cast<std::uint32_t>(flat.size()));
    w.u32(static_cast<std::uint32_t>(flat.dim()));
    for (const auto& id : flat.ids()) w.short_string(id);
    for (std::size_t i = 0; i < flat.size(); ++i)
        for (double x : flat.row(i)) w.f64(x);
}

}  // namespace

bool ranks_before(const Hit& a, const Hit& b) {
    return a.score > b.score || (a.score == b.score && a.doc_id < b.doc_id);
}

// ---------------------------------------------------------------------------
// Flat

FlatIndex::FlatIndex(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw ArgumentError("index dim must be positive");
}

FlatIndex FlatIndex::build(const embeddings::EmbeddingStore& store) {
    FlatIndex idx(store.dim());
    for (std::size_t i = 0; i < store.size(); ++i) idx.add(store.ids()[i], store.row_as_double(i));
    return idx;
}

void FlatIndex::add(std::string id, std::span<const double> v) {
    if (v.size() != dim_) throw DataError("dim mismatch for '" + id + "'");
    const double n = norm(v);
    if (!(n > 0.0) || !std::isfinite(n)) throw DataError("zero or non-finite vector for '" + id + "'");
    if (!index_.emplace(id, ids_.size()).second) throw DataError("duplicate id '" + id + "'");
    ids_.push_back(std::move(id));
    for (double x : v) data_.push_back(x / n);
}

void FlatIndex::add_normalized(std::string id, std::span<const double> unit) {
    if (unit.size() != dim_) throw DataError("dim mismatch for '" + id + "'");
    if (!(std::abs(norm(unit) - 1.0) <= 1e-9)) throw DataError("row '" + id + "' is not unit length");
    if (!index_.emplace(id, ids_.size()).second) throw DataError("duplicate id '" + id + "'");
    ids_.push_back(std::move(id));
    data_.insert(data_.end(), unit.begin(), unit.end());
}

std::vector<Hit> FlatIndex::search(std::span<const double> query, std::size_t k) const {
    if (k < 1) throw ArgumentError("k must be >= 1");
    const auto q = unit_query(query, dim_);
    std::vector<Hit> hits;
    hits.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) hits.push_back({ids_[i], score(q, row(i))});
    return top_k(std::move(hits), k);
}

std::string FlatIndex::serialize() const {
    io::ByteWriter w;
    write_header(w, kKindFlat, *this);
    return std::move(w).take();
}

// ---------------------------------------------------------------------------
// HNSW

std::size_t max_links(const HnswParams& p, std::size_t level) { return level == 0 ? 2 * p.m : p.m; }

// Read-only traversal shared by construction and search.
class HnswWalker {
public:
    explicit HnswWalker(const HnswIndex& g) : g_(g), visit_(g.size(), 0) {}

    double sim(std::span<const double> q, std::uint32_t node) const { return score(q, g_.base_.row(node)); }
    double sim(std::uint32_t a, std::uint32_t b) const { return score(g_.base_.row(a), g_.base_.row(b)); }

    Cand greedy(std::span<const double> q, Cand cur, std::size_t level) const {
        for (bool moved = true; moved;) {
            moved = false;
            for (auto nb : g_.links_[cur.node][level]) {
                const Cand c{sim(q, nb), nb};
                if (closer(c, cur)) {
                    cur = c;
                    moved = true;
                }
            }
        }
        return cur;
    }

    // Up to ef candidates, closest first. Stops only once the result set is
    // full, so ef = size() explores the whole connected layer.
    std::vector<Cand> search_layer(std::span<const double> q, const std::vector<Cand>& eps, std::size_t ef,
                                   std::size_t level) {
        if (++tag_ == 0) {
            std::fill(visit_.begin(), visit_.end(), 0);
            tag_ = 1;
        }
        std::priority_queue<Cand, std::vector<Cand>, CloserFirst> frontier;
        std::priority_queue<Cand, std::vector<Cand>, FartherFirst> best;
        for (const auto& e : eps) {
            if (visit_[e.node] == tag_) continue;
            visit_[e.node] = tag_;
            frontier.push(e);
            best.push(e);
            if (best.size() > ef) best.pop();
        }
        while (!frontier.empty()) {
            const Cand c = frontier.top();
            if (best.size() >= ef && closer(best.top(), c)) break;
            frontier.pop();
            for (auto nb : g_.links_[c.node][level]) {
                if (visit_[nb] == tag_) continue;
                visit_[nb] = tag_;
                const Cand cand{sim(q, nb), nb};
                if (best.size() < ef || closer(cand, best.top())) {
                    frontier.push(cand);
                    best.push(cand);
                    if (best.size() > ef) best.pop();
                }
            }
        }
        std::vector<Cand> out;
        while (!best.empty()) {
            out.push_back(best.top());
            best.pop();
        }
        std::reverse(out.begin(), out.end());
        return out;
    }

    std::vector<bool> reachable() const {
        std::vector<bool> seen(g_.size(), false);
        if (g_.size() == 0) return seen;
        std::vector<std::uint32_t> stack{static_cast<std::uint32_t>(g_.entry_)};
        seen[g_.entry_] = true;
        while (!stack.empty()) {
            const auto v = stack.back();
            stack.pop_back();
            for (auto nb : g_.links_[v][0])
                if (!seen[nb]) {
                    seen[nb] = true;
                    stack.push_back(nb);
                }
        }
        return seen;
    }

private:
    const HnswIndex& g_;
    std::vector<std::uint32_t> visit_;
    std::uint32_t tag_ = 0;
};

class HnswBuilder {
public:
    explicit HnswBuilder(HnswIndex& g) : g_(g), walk_(g) {}

    void insert(std::uint32_t node, std::size_t level) {
        const auto q = g_.base_.row(node);
        if (node == 0) {
            g_.entry_ = 0;
            g_.max_level_ = level;
            return;
        }
        const auto entry = static_cast<std::uint32_t>(g_.entry_);
        Cand ep{walk_.sim(q, entry), entry};
        for (std::size_t lc = g_.max_level_; lc > level; --lc) ep = walk_.greedy(q, ep, lc);
        std::vector<Cand> eps{ep};
        for (std::size_t lc = std::min(level, g_.max_level_) + 1; lc-- > 0;) {
            auto found = walk_.search_layer(q, eps, g_.params_.ef_construction, lc);
            const auto chosen = select(found, max_links(g_.params_, lc));
            auto& mine = g_.links_[node][lc];
            for (const auto& c : chosen) mine.push_back(c.node);
            for (const auto& c : chosen) connect(c.node, node, lc);
            eps = std::move(found);
        }
        if (level > g_.max_level_) {
            g_.max_level_ = level;
            g_.entry_ = node;
        }
    }

    // Links every node that layer-0 traversal from the entry point misses.
    void repair() {
        const std::size_t n = g_.size();
        const std::size_t cap = max_links(g_.params_, 0);
        for (;;) {
            const auto seen = walk_.reachable();
            const auto it = std::find(seen.begin(), seen.end(), false);
            if (it == seen.end()) return;
            const auto orphan = static_cast<std::uint32_t>(it - seen.begin());
            const auto q = g_.base_.row(orphan);
            std::vector<Cand> options;
            for (std::uint32_t i = 0; i < n; ++i)
                if (seen[i]) options.push_back({walk_.sim(q, i), i});
            std::sort(options.begin(), options.end(), closer);
            const auto host = std::find_if(options.begin(), options.end(),
                                           [&](const Cand& c) { return g_.links_[c.node][0].size() < cap; });
            if (host == options.end()) throw Error("hnsw repair: every reachable node is at its link cap");
            g_.links_[host->node][0].push_back(orphan);
            auto& back = g_.links_[orphan][0];
            if (back.size() < cap && std::find(back.begin(), back.end(), host->node) == back.end())
                back.push_back(host->node);
        }
    }

private:
    // Heuristic neighbor selection: keep a candidate only if it is closer to the
    // base point than to every neighbor kept so far, then top up with the
    // closest pruned candidates.
    std::vector<Cand> select(std::vector<Cand> cands, std::size_t m) const {
        std::sort(cands.begin(), cands.end(), closer);
        std::vector<Cand> kept, pruned;
        for (const auto& c : cands) {
            if (kept.size() >= m) break;
            const bool diverse = std::none_of(kept.begin(), kept.end(),
                                              [&](const Cand& r) { return walk_.sim(c.node, r.node) > c.sim; });
            (diverse ? kept : pruned).push_back(c);
        }
        for (std::size_t i = 0; i < pruned.size() && kept.size() < m; ++i) kept.push_back(pruned[i]);
        return kept;
    }

    void connect(std::uint32_t from, std::uint32_t to, std::size_t level) {
        auto& list = g_.links_[from][level];
        list.push_back(to);
        if (list.size() <= max_links(g_.params_, level)) return;
        std::vector<Cand> cands;
        for (auto nb : list) cands.push_back({walk_.sim(from, nb), nb});
        const auto kept = select(std::move(cands), max_links(g_.params_, level));
        list.clear();
        for (const auto& c : kept) list.push_back(c.node);
    }

    HnswIndex& g_;
    HnswWalker walk_;
};

HnswIndex HnswIndex::build(FlatIndex base, const HnswParams& params) {
    if (params.m < 2) throw ArgumentError("hnsw M must be >= 2");
    if (params.ef_construction < 1 || params.ef_search < 1) throw ArgumentError("hnsw ef parameters must be >= 1");
    if (base.size() > UINT32_MAX) throw ArgumentError("hnsw index too large");
    HnswIndex g(std::move(base));
    g.params_ = params;
    const std::size_t n = g.size();
    g.levels_.resize(n);
    g.links_.resize(n);

    Rng rng(params.seed);
    const double ml = 1.0 / std::log(static_cast<double>(params.m));
    for (std::size_t i = 0; i < n; ++i) {
        double u = rng.uniform();
        while (u <= 0.0) u = rng.uniform();
        const auto level = std::min<std::size_t>(static_cast<std::size_t>(-std::log(u) * ml), 255);
        g.levels_[i] = static_cast<std::uint8_t>(level);
        g.links_[i].resize(level + 1);
    }
    HnswBuilder builder(g);
    for (std::size_t i = 0; i < n; ++i) builder.insert(static_cast<std::uint32_t>(i), g.levels_[i]);
    builder.repair();
    return g;
}

std::vector<Hit> HnswIndex::search(std::span<const double> query, std::size_t k) const {
    return search(query, k, std::max(k, params_.ef_search));
}

std::vector<Hit> HnswIndex::search(std::span<const double> query, std::size_t k, std::size_t ef_search) const {
    if (k < 1) throw ArgumentError("k must be >= 1");
    if (ef_search < k) throw ArgumentError("ef_search must be >= k");
    const auto q = unit_query(query, dim());
    if (size() == 0) return {};

    HnswWalker walker(*this);
    Cand ep{walker.sim(q, static_cast<std::uint32_t>(entry_)), static_cast<std::uint32_t>(entry_)};
    for (std::size_t lc = max_level_; lc > 0; --lc) ep = walker.greedy(q, ep, lc);
    const auto found = walker.search_layer(q, {ep}, ef_search, 0);

    std::vector<Hit> hits;
    hits.reserve(found.size());
    for (const auto& c : found) hits.push_back({ids()[c.node], c.sim});
    return top_k(std::move(hits), k);
}

void HnswIndex::check_invariants() const {
    const std::size_t n = size();
    for (std::size_t v = 0; v < n; ++v) {
        if (links_[v].size() != static_cast<std::size_t>(levels_[v]) + 1)
            throw DataError("hnsw node " + std::to_string(v) + " has a wrong number of layers");
        for (std::size_t l = 0; l < links_[v].size(); ++l) {
            if (links_[v][l].size() > max_links(params_, l))
                throw DataError("hnsw node " + std::to_string(v) + " exceeds its link cap at level " +
                                std::to_string(l));
            for (auto nb : links_[v][l])
                if (nb >= n || levels_[nb] < l) throw DataError("hnsw link to a missing node");
        }
    }
    if (n == 0) return;
    if (levels_[entry_] != max_level_) throw DataError("hnsw entry point is not on the top level");
    const auto seen = HnswWalker(*this).reachable();
    for (std::size_t v = 0; v < n; ++v)
        if (!seen[v]) throw DataError("hnsw node '" + ids()[v] + "' unreachable at layer 0");
}

std::string HnswIndex::serialize() const {
    io::ByteWriter w;
    write_header(w, kKindHnsw, base_);
    w.u32(static_cast<std::uint32_t>(params_.m));
    w.u32(static_cast<std::uint32_t>(params_.ef_construction));
    w.u32(static_cast<std::uint32_t>(params_.ef_search));
    w.u64(params_.seed);
    w.u32(static_cast<std::uint32_t>(entry_));
    w.u32(static_cast<std::uint32_t>(max_level_));
    for (std::size_t v = 0; v < size(); ++v) {
        w.u8(levels_[v]);
        for (const auto& list : links_[v]) {
            w.u32(static_cast<std::uint32_t>(list.size()));
            for (auto nb : list) w.u32(nb);
        }
    }
    return std::move(w).take();
}

HnswIndex HnswIndex::from_parts(FlatIndex base, const HnswParams& params, std::size_t entry, std::size_t max_level,
                                std::vector<std::uint8_t> levels,
                                std::vector<std::vector<std::vector<std::uint32_t>>> links) {
    HnswIndex g(std::move(base));
    g.params_ = params;
    g.entry_ = entry;
    g.max_level_ = max_level;
    g.levels_ = std::move(levels);
    g.links_ = std::move(links);
    if (g.levels_.size() != g.size() || g.links_.size() != g.size() || (g.size() && entry >= g.size()))
        throw DataError("hnsw parts disagree on node count");
    g.check_invariants();
    return g;
}

// ---------------------------------------------------------------------------
// Files

std::unique_ptr<Index> deserialize_index(std::string_view bytes) {
    io::ByteReader r(bytes);
    if (bytes.size() < kMagic.size() || r.bytes(kMagic.size()) != kMagic) throw DataError("bad magic");
    const auto version = r.u8();
    if (version != kVersion) throw DataError("unsupported DIDX version " + std::to_string(version));
    const auto kind = r.u8();
    if (kind != kKindFlat && kind != kKindHnsw) throw DataError("bad index kind " + std::to_string(kind));
    const auto count = r.u32();
    const auto dim = r.u32();
    if (dim == 0) throw DataError("zero dim");
    std::vector<std::string> ids;
    for (std::uint32_t i = 0; i < count; ++i) ids.push_back(r.short_string());
    FlatIndex flat(dim);
    Vector row(dim);
    for (std::uint32_t i = 0; i < count; ++i) {
        for (auto& x : row) x = r.f64();
        flat.add_normalized(std::move(ids[i]), row);
    }
    if (kind == kKindFlat) {
        if (!r.at_end()) throw DataError("trailing bytes after payload");
        return std::make_unique<FlatIndex>(std::move(flat));
    }

    HnswParams p;
    p.m = r.u32();
    p.ef_construction = r.u32();
    p.ef_search = r.u32();
    if (p.m < 2 || p.ef_construction < 1 || p.ef_search < 1) throw DataError("bad hnsw parameters");
    p.seed = r.u64();
    const std::size_t entry = r.u32();
    const std::size_t max_level = r.u32();
    std::vector<std::uint8_t> levels(count);
    std::vector<std::vector<std::vector<std::uint32_t>>> links(count);
    for (std::uint32_t v = 0; v < count; ++v) {
        levels[v] = r.u8();
        links[v].resize(levels[v] + 1u);
        for (auto& list : links[v]) {
            const auto n = r.u32();
            if (n > r.remaining() / 4) throw DataError("truncated payload");
            list.resize(n);
            for (auto& nb : list) nb = r.u32();
        }
    }
    if (!r.at_end()) throw DataError("trailing bytes after payload");
    return std::make_unique<HnswIndex>(
        HnswIndex::from_parts(std::move(flat), p, entry, max_level, std::move(levels), std::move(links)));
}

void write_index(const Index& index, const std::string& path) { io::write_file_atomic(path, index.serialize()); }

std::unique_ptr<Index> read_index(const std::string& path) {
    const auto bytes = io::read_file(path);
    try {
        return deserialize_index(bytes);
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Pipeline helpers

FlatIndex index_documents(const embeddings::EmbeddingStore& text, const embeddings::EmbeddingStore& image,
                          const fusion::FusionParams& params, const std::vector<std::string>& doc_ids) {
    if (text.dim() != image.dim() || text.dim() != params.dim)
        throw DataError("text, image and fusion dims differ");
    const auto groups = embeddings::group_images(image);
    const auto& ids = doc_ids.empty() ? text.ids() : doc_ids;
    FlatIndex idx(text.dim());
    for (const auto& id : ids) {
        auto g = groups.find(id);
        if (g == groups.end()) throw DataError("no images for document '" + id + "'");
        try {
            const auto t = embeddings::l2_normalize(text.get(id));
            const auto im = embeddings::l2_normalize(embeddings::mean_pool_images(g->second, image));
            idx.add(id, fusion::fuse(t, im, params));
        } catch (const ArgumentError& e) {
            throw DataError("document '" + id + "': " + e.what());
        }
    }
    return idx;
}

std::vector<RankedList> search_all(const Index& index, const embeddings::EmbeddingStore& queries, std::size_t k,
                                   std::size_t threads) {
    if (k < 1) throw ArgumentError("k must be >= 1");
    if (queries.dim() != index.dim()) throw DataError("query dim does not match index dim");
    std::vector<RankedList> out(queries.size());
    parallel_for(out.size(), threads, [&](std::size_t i) {
        out[i].query_id = queries.ids()[i];
        out[i].hits = index.search(queries.row_as_double(i), k);
    });
    return out;
}

std::string results_to_jsonl(const std::vector<RankedList>& results) {
    std::string out;
    for (const auto& r : results) {
        nlohmann::ordered_json j;
        j["query_id"] = r.query_id;
        j["hits"] = nlohmann::ordered_json::array();
        for (const auto& h : r.hits) j["hits"].push_back({{"doc_id", h.doc_id}, {"score", h.score}});
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<RankedList> results_from_jsonl(std::string_view text) {
    std::vector<RankedList> out;
    std::size_t lineno = 0, pos = 0;
    while (pos < text.size()) {
        const auto nl = text.find('\n', pos);
        const auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() : nl + 1;
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            RankedList r;
            r.query_id = j.at("query_id").get<std::string>();
            for (const auto& h : j.at("hits")) r.hits.push_back({h.at("doc_id").get<std::string>(), h.at("score").get<double>()});
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw DataError("results line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace docmmir::retrieval
