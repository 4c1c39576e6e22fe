#include "docmmir/metrics.hpp"

#include <cmath>
#include <string>

#include "docmmir/error.hpp"

namespace docmmir::metrics {

namespace {

void check(Rank r) {
    if (r && *r < 1) throw ArgumentError("ranks are 1-based; got 0");
}

template <typename F>
double mean_of(std::span<const Rank> ranks, F per_query) {
    if (ranks.empty()) return 0.0;
    double sum = 0.0;
    for (Rank r : ranks) sum += per_query(r);
    return sum / static_cast<double>(ranks.size());
}

}  // namespace

double reciprocal_rank_at_10(Rank r) {
    check(r);
    return r && *r <= kCutoff ? 1.0 / static_cast<double>(*r) : 0.0;
}

double dcg_at_10(Rank r) {
    check(r);
    return r && *r <= kCutoff ? 1.0 / std::log2(static_cast<double>(*r) + 1.0) : 0.0;
}

double mrr_at_10(std::span<const Rank> ranks) { return mean_of(ranks, reciprocal_rank_at_10); }

double ndcg_at_10(std::span<const Rank> ranks) { return mean_of(ranks, dcg_at_10); }

double hit_at_k(std::span<const Rank> ranks, std::size_t k) {
    if (k < 1) throw ArgumentError("hit@k needs k >= 1");
    return mean_of(ranks, [k](Rank r) {
        check(r);
        return r && *r <= k ? 1.0 : 0.0;
    });
}

}  // namespace docmmir::metrics
