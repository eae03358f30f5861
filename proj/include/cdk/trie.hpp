#pragma once

// Reference prefix tree over a constraint set. Used as the correctness oracle
// for prefix verification and as the baseline in benchmarks.
//
// Layout: node ids follow depth-first preorder (root = 0). The children of a
// node occupy a contiguous, label-sorted edge range, so a child lookup is a
// binary search over that range.
//
// The text form is a plain nested JSON document:
//   {"vocab_size": N, "root": {"end": false, "next": {"12": {...}, ...}}}

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cdk/core.hpp"
#include "cdk/corpus.hpp"

namespace cdk {

class Trie {
 public:
  using NodeId = std::uint32_t;
  static constexpr NodeId kRoot = 0;

  static Trie build(const ConstraintSet& s);
  // Throws FormatError on malformed or structurally invalid documents.
  static Trie from_json(std::istream& in);
  static Trie from_json(const std::string& text);

  std::uint32_t vocab_size() const noexcept { return vocab_size_; }
  std::size_t node_count() const noexcept { return terminal_.size(); }
  // Length of the longest keyword.
  std::size_t max_len() const noexcept { return max_depth_; }

  bool terminal(NodeId n) const { return terminal_.at(n) != 0; }
  std::optional<NodeId> child(NodeId n, TokenId t) const;
  std::optional<NodeId> find(std::span<const TokenId> prefix) const;
  // Children labels of n in ascending order.
  std::span<const TokenId> labels(NodeId n) const;

  // Every keyword, ascending under lex_compare.
  std::vector<TokenSeq> sequences() const;

  void write_json(std::ostream& out) const;
  std::string to_json() const;

  friend bool operator==(const Trie&, const Trie&) = default;

 private:
  friend class TrieAssembler;

  std::uint32_t vocab_size_ = 0;
  std::size_t max_depth_ = 0;
  std::vector<std::uint8_t> terminal_;
  std::vector<std::uint32_t> edge_begin_;  // node_count + 1 offsets
  std::vector<TokenId> edge_label_;
  std::vector<NodeId> edge_target_;
};

// Same contract as ppv_verify, answered by walking the tree.
std::vector<bool> trie_verify_candidates(const Trie& t, std::span<const TokenId> prefix,
                                         std::span<const TokenId> candidates);
Mask trie_verify(const Trie& t, std::span<const TokenId> prefix,
                 std::span<const TokenId> candidates);
Mask trie_full_valid_set(const Trie& t, std::span<const TokenId> prefix);

inline Trie trie_build(const ConstraintSet& s) { return Trie::build(s); }

void save_trie_json(const Trie& t, const std::filesystem::path& path);
Trie load_trie_json(const std::filesystem::path& path);

}  // namespace cdk
