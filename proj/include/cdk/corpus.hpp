#pragma once

// Constraint sets and the length-bucketed, lexicographically sorted, padded
// keyword matrix that prefix verification binary-searches.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "cdk/core.hpp"

namespace cdk {

// Padding cell. Encoded as all-ones but ordered below every TokenId.
inline constexpr std::uint32_t kPad = 0xFFFFFFFFu;

// Order key of a cell: the +1 wraps kPad to 0 and shifts tokens up by one.
constexpr std::uint32_t cell_key(std::uint32_t cell) noexcept { return cell + 1u; }

// A deduplicated, sorted set of non-empty keywords over a vocabulary.
class ConstraintSet {
 public:
  // Throws TokenOutOfRangeError for tokens outside vocab and DomainError for
  // empty keywords. Duplicates are dropped.
  ConstraintSet(Vocabulary vocab, std::vector<TokenSeq> sequences);

  const Vocabulary& vocab() const noexcept { return vocab_; }
  // Ascending under lex_compare.
  const std::vector<TokenSeq>& sequences() const noexcept { return seqs_; }
  std::size_t size() const noexcept { return seqs_.size(); }
  bool empty() const noexcept { return seqs_.empty(); }
  bool contains(std::span<const TokenId> seq) const;
  std::size_t max_len() const noexcept;

 private:
  Vocabulary vocab_;
  std::vector<TokenSeq> seqs_;
};

// One keyword per line, tokens as space-separated decimal integers. Blank
// lines are skipped. Throws ParseError / TokenOutOfRangeError naming the line.
ConstraintSet read_keywords(std::istream& in, const Vocabulary& vocab);
ConstraintSet read_keywords(const std::filesystem::path& path, const Vocabulary& vocab);
void write_keywords(std::ostream& out, const ConstraintSet& s);

bool check_prefix_free(const ConstraintSet& s);

enum class BucketPolicy {
  Pow2,    // true lengths grouped as [1], [2,3], [4,7], [8,15], ...
  Single,  // one bucket padded to the global maximum length
};

struct Bucket {
  std::uint32_t width = 0;
  std::uint32_t min_len = 0;
  std::uint32_t max_len = 0;
  std::vector<std::uint32_t> true_lengths;
  std::vector<std::uint32_t> cells;  // row-major, count() x width

  std::size_t count() const noexcept { return true_lengths.size(); }
  std::span<const std::uint32_t> row(std::size_t i) const noexcept {
    return {cells.data() + i * width, width};
  }
  // The row without its padding.
  std::span<const TokenId> keyword(std::size_t i) const noexcept {
    return {cells.data() + i * width, true_lengths[i]};
  }

  friend bool operator==(const Bucket&, const Bucket&) = default;
};

struct SortedIndex {
  std::uint32_t vocab_size = 0;
  std::vector<Bucket> buckets;
  bool prefix_free = true;

  std::size_t total_count() const noexcept;
  std::size_t max_len() const noexcept;
  // Every keyword, ascending under lex_compare.
  std::vector<TokenSeq> sequences() const;
  ConstraintSet constraint_set() const;

  friend bool operator==(const SortedIndex&, const SortedIndex&) = default;
};

// Throws EmptySetError when s is empty.
SortedIndex build_index(const ConstraintSet& s, BucketPolicy policy = BucketPolicy::Pow2);

// Bucket that the Pow2 policy assigns to a keyword of the given length.
std::uint32_t pow2_bucket_of(std::uint32_t length) noexcept;

// Little-endian binary format with a trailing FNV-1a checksum.
void save_index(const SortedIndex& idx, const std::filesystem::path& path);
void write_index(const SortedIndex& idx, std::ostream& out);
// Throws IoError, FormatError (magic/version/size/checksum) or
// CorruptionError (structural invariants, including sort order).
SortedIndex load_index(const std::filesystem::path& path);
SortedIndex read_index(std::span<const unsigned char> bytes);

std::uint64_t fnv1a64(std::span<const unsigned char> bytes) noexcept;

}  // namespace cdk
