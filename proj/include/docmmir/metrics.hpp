#pragma once

// Rank-based retrieval metrics for single-positive queries.
//
// A rank is the 1-based position of the relevant document, or nullopt when it
// was not retrieved at all. Every function averages over the given ranks and
// returns 0 for an empty list.

#include <cstddef>
#include <optional>
#include <span>

namespace docmmir::metrics {

using Rank = std::optional<std::size_t>;

inline constexpr std::size_t kCutoff = 10;

/// Mean of 1/rank over ranks <= 10 (0 otherwise).
double mrr_at_10(std::span<const Rank> ranks);

/// Mean of 1/log2(rank + 1) over ranks <= 10 (0 otherwise). Ideal DCG is 1.
double ndcg_at_10(std::span<const Rank> ranks);

/// Fraction of ranks <= k.
double hit_at_k(std::span<const Rank> ranks, std::size_t k);

/// Per-query contributions, for callers that aggregate over subsets.
double reciprocal_rank_at_10(Rank r);
double dcg_at_10(Rank r);

}  // namespace docmmir::metrics
