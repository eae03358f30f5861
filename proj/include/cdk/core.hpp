#pragma once

// Token, sequence and probability primitives shared by every module.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cdk {

// Tokens are ordered by their integer value.
using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;

class Vocabulary {
 public:
  explicit Vocabulary(std::uint32_t size);
  Vocabulary(std::uint32_t size, std::vector<std::string> display);

  std::uint32_t size() const noexcept { return size_; }
  bool contains(TokenId t) const noexcept { return t < size_; }
  bool has_display() const noexcept { return !display_.empty(); }
  const std::string& display(TokenId t) const;
  std::optional<TokenId> lookup(const std::string& text) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.size_ == b.size_;
  }

 private:
  std::uint32_t size_;
  std::vector<std::string> display_;
};

// P(. | prefix) over the vocabulary plus a separate end-of-keyword coordinate.
struct TokenDistribution {
  std::vector<double> probs;
  double eok = 0.0;

  static constexpr double kInputTolerance = 1e-9;
  static constexpr double kOutputTolerance = 1e-12;

  std::size_t vocab_size() const noexcept { return probs.size(); }
  // Sum of all coordinates, tokens in ascending id order then EOK.
  double total() const noexcept;
  // Throws InvalidDistributionError on negative or non-finite entries or
  // when the total is outside 1 +/- tolerance.
  void validate(double tolerance = kInputTolerance) const;

  friend bool operator==(const TokenDistribution&, const TokenDistribution&) = default;
};

// Dense validity mask over the vocabulary plus the EOK permission.
struct Mask {
  std::vector<bool> bits;
  bool eok_allowed = false;

  Mask() = default;
  explicit Mask(std::size_t vocab_size) : bits(vocab_size, false) {}

  std::size_t vocab_size() const noexcept { return bits.size(); }
  bool test(TokenId t) const { return bits.at(t); }
  void set(TokenId t, bool v = true) { bits.at(t) = v; }
  std::size_t count() const noexcept;
  std::vector<TokenId> tokens() const;

  friend bool operator==(const Mask&, const Mask&) = default;
};

// Lexicographic order where a proper prefix sorts before its extensions.
std::strong_ordering lex_compare(std::span<const TokenId> a, std::span<const TokenId> b) noexcept;

// True iff a is a (not necessarily proper) prefix of b.
bool is_prefix(std::span<const TokenId> a, std::span<const TokenId> b) noexcept;

struct MaskedDistribution {
  TokenDistribution dist;
  double mass = 0.0;  // |P (.) mask|_1 before renormalization
};

// Restricts d to the coordinates enabled by mask and renormalizes. Throws
// ZeroMassError when the masked coordinates carry no probability.
MaskedDistribution normalize_masked(const TokenDistribution& d, const Mask& mask);

// Masked mass with the summation order fixed: tokens ascending, then EOK.
double masked_mass(const TokenDistribution& d, const Mask& mask);

std::string to_string(std::span<const TokenId> seq);

// Parses whitespace-separated decimal token ids. Throws ParseError.
TokenSeq parse_tokens(const std::string& text);

struct TokenSeqHash {
  std::size_t operator()(const TokenSeq& s) const noexcept;
};

}  // namespace cdk
