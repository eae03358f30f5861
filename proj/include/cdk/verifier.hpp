#pragma once

// Prefix verification over a SortedIndex: for each candidate token t, is
// prefix + [t] a prefix of some keyword? Each candidate is resolved by an
// independent binary search per bucket, so a batch can be split freely.

#include <cstdint>
#include <span>
#include <vector>

#include "cdk/core.hpp"
#include "cdk/corpus.hpp"

namespace cdk {

// Row comparison used by the binary search.
enum class SearchMode {
  Truncated,  // compare only the first |prefix| + 1 cells of each row
  FullRow,    // compare whole padded rows against the padded query
};

struct VerifyStats {
  std::uint64_t comparisons = 0;  // row comparisons inside binary searches
  std::uint64_t searches = 0;     // (candidate, bucket) searches performed

  VerifyStats& operator+=(const VerifyStats& o) {
    comparisons += o.comparisons;
    searches += o.searches;
    return *this;
  }
};

// Per-candidate validity, in candidate order. Throws PrefixTooLongError when
// |prefix| >= idx.max_len(), TokenOutOfRangeError for candidates outside the
// vocabulary and DomainError for repeated candidates.
std::vector<bool> ppv_verify_candidates(const SortedIndex& idx, std::span<const TokenId> prefix,
                                        std::span<const TokenId> candidates,
                                        VerifyStats* stats = nullptr,
                                        SearchMode mode = SearchMode::Truncated);

// Dense mask: bits for candidates found valid, zero elsewhere; eok_allowed
// iff prefix itself is a keyword.
Mask ppv_verify(const SortedIndex& idx, std::span<const TokenId> prefix,
                std::span<const TokenId> candidates, VerifyStats* stats = nullptr,
                SearchMode mode = SearchMode::Truncated);

// ppv_verify with every vocabulary token as a candidate.
Mask full_valid_set(const SortedIndex& idx, std::span<const TokenId> prefix,
                    VerifyStats* stats = nullptr);

bool is_member(const SortedIndex& idx, std::span<const TokenId> seq);

// Upper bound on row comparisons for one candidate of a query whose
// candidate rows have length query_len.
std::uint64_t comparison_bound(const SortedIndex& idx, std::size_t query_len);

struct VerifyQuery {
  TokenSeq prefix;
  std::vector<TokenId> candidates;
};

// Verifies queries on up to `workers` threads. Results are in query order.
std::vector<Mask> ppv_verify_batch(const SortedIndex& idx, std::span<const VerifyQuery> queries,
                                   unsigned workers = 1, VerifyStats* stats = nullptr);

}  // namespace cdk
