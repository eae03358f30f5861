#include "cdk/verifier.hpp"

#include <algorithm>
#include <bit>
#include <thread>

#include "cdk/errors.hpp"

namespace cdk {

namespace {

void check_candidates(const SortedIndex& idx, std::span<const TokenId> candidates) {
  for (TokenId t : candidates) {
    if (t >= idx.vocab_size) {
      throw TokenOutOfRangeError("candidate token " + std::to_string(t) +
                                 " outside vocabulary of size " + std::to_string(idx.vocab_size));
    }
  }
  std::vector<TokenId> sorted(candidates.begin(), candidates.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw DomainError("candidate tokens must be distinct");
  }
}

// Three-way comparison of the first prefix.size() + 1 cells of row against
// prefix + [token].
int compare_truncated(std::span<const std::uint32_t> row, std::span<const TokenId> prefix,
                      TokenId token) {
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    const auto a = cell_key(row[i]);
    const auto b = cell_key(prefix[i]);
    if (a != b) return a < b ? -1 : 1;
  }
  const auto a = cell_key(row[prefix.size()]);
  const auto b = cell_key(token);
  return a < b ? -1 : (a == b ? 0 : 1);
}

// Same order over whole rows: the query is implicitly padded to row width.
int compare_full(std::span<const std::uint32_t> row, std::span<const TokenId> prefix,
                 TokenId token) {
  if (int c = compare_truncated(row, prefix, token); c != 0) return c;
  for (std::size_t i = prefix.size() + 1; i < row.size(); ++i) {
    if (row[i] != kPad) return 1;
  }
  return 0;
}

bool search_bucket(const Bucket& b, std::span<const TokenId> prefix, TokenId token,
                   SearchMode mode, VerifyStats* stats) {
  // First row >= query over the half-open range [low, high).
  std::size_t low = 0;
  std::size_t high = b.count();
  std::uint64_t comparisons = 0;
  while (low < high) {
    const std::size_t mid = low + (high - low) / 2;
    const auto row = b.row(mid);
    const int c = mode == SearchMode::Truncated ? compare_truncated(row, prefix, token)
                                                : compare_full(row, prefix, token);
    ++comparisons;
    if (c < 0) {
      low = mid + 1;
    } else {
      high = mid;
    }
  }
  if (stats) {
    stats->comparisons += comparisons;
    stats->searches += 1;
  }
  return low < b.count() && compare_truncated(b.row(low), prefix, token) == 0;
}

}  // namespace

std::vector<bool> ppv_verify_candidates(const SortedIndex& idx, std::span<const TokenId> prefix,
                                        std::span<const TokenId> candidates, VerifyStats* stats,
                                        SearchMode mode) {
  if (prefix.size() >= idx.max_len()) {
    throw PrefixTooLongError("prefix of length " + std::to_string(prefix.size()) +
                             " cannot be extended within keywords of length <= " +
                             std::to_string(idx.max_len()));
  }
  check_candidates(idx, candidates);

  const std::size_t query_len = prefix.size() + 1;
  std::vector<bool> valid(candidates.size(), false);
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    for (const auto& b : idx.buckets) {
      if (b.max_len < query_len) continue;
      if (search_bucket(b, prefix, candidates[c], mode, stats)) {
        valid[c] = true;
        break;
      }
    }
  }
  return valid;
}

Mask ppv_verify(const SortedIndex& idx, std::span<const TokenId> prefix,
                std::span<const TokenId> candidates, VerifyStats* stats, SearchMode mode) {
  const auto valid = ppv_verify_candidates(idx, prefix, candidates, stats, mode);
  Mask mask(idx.vocab_size);
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    if (valid[c]) mask.set(candidates[c]);
  }
  mask.eok_allowed = is_member(idx, prefix);
  return mask;
}

Mask full_valid_set(const SortedIndex& idx, std::span<const TokenId> prefix, VerifyStats* stats) {
  std::vector<TokenId> all(idx.vocab_size);
  for (TokenId t = 0; t < idx.vocab_size; ++t) all[t] = t;
  return ppv_verify(idx, prefix, all, stats);
}

bool is_member(const SortedIndex& idx, std::span<const TokenId> seq) {
  if (seq.empty()) return false;
  const auto len = seq.size();
  for (const auto& b : idx.buckets) {
    if (len < b.min_len || len > b.max_len) continue;
    const auto prefix = seq.first(len - 1);
    const TokenId last = seq.back();
    std::size_t low = 0;
    std::size_t high = b.count();
    while (low < high) {
      const std::size_t mid = low + (high - low) / 2;
      if (compare_full(b.row(mid), prefix, last) < 0) {
        low = mid + 1;
      } else {
        high = mid;
      }
    }
    if (low < b.count() && b.true_lengths[low] == len &&
        compare_truncated(b.row(low), prefix, last) == 0) {
      return true;
    }
  }
  return false;
}

std::uint64_t comparison_bound(const SortedIndex& idx, std::size_t query_len) {
  std::uint64_t bound = 0;
  for (const auto& b : idx.buckets) {
    if (b.max_len < query_len) continue;
    bound += static_cast<std::uint64_t>(std::bit_width(b.count()));  // ceil(log2(count + 1))
  }
  return bound;
}

std::vector<Mask> ppv_verify_batch(const SortedIndex& idx, std::span<const VerifyQuery> queries,
                                   unsigned workers, VerifyStats* stats) {
  std::vector<Mask> out(queries.size());
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(queries.size())));
  if (queries.empty()) return out;

  std::vector<VerifyStats> partial(workers);
  std::vector<std::exception_ptr> errors(workers);
  auto run = [&](unsigned w) {
    try {
      for (std::size_t q = w; q < queries.size(); q += workers) {
        out[q] = ppv_verify(idx, queries[q].prefix, queries[q].candidates, &partial[w]);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(run, w);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  if (stats) {
    for (const auto& s : partial) *stats += s;
  }
  return out;
}

}  // namespace cdk
