#pragma once

// Autoregressive model abstraction P_L(. | prefix) and the exact, enumerable
// implementations the oracles rely on.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>

#include "cdk/core.hpp"
#include "cdk/corpus.hpp"

namespace cdk {

// How a generated keyword ends.
enum class TerminationMode {
  PrefixFree,  // stop as soon as the sequence is a keyword; no EOK factor
  Eok,         // stop when the EOK coordinate is drawn; EOK factor included
};

std::string_view to_string(TerminationMode m) noexcept;
// Accepts "eok" and "prefixfree". Throws DomainError.
TerminationMode parse_termination(std::string_view text);

class ModelInterface {
 public:
  virtual ~ModelInterface() = default;

  virtual std::uint32_t vocab_size() const = 0;
  // Prefixes of length >= max_len() cannot be extended.
  virtual std::size_t max_len() const = 0;

  // Distribution after applying temperature. The default implementation
  // tempers base_distribution(). Throws PrefixTooLongError and DomainError
  // (non-positive temperature).
  virtual TokenDistribution next_distribution(std::span<const TokenId> prefix,
                                              double temperature) const;

 protected:
  // Distribution at temperature 1.
  virtual TokenDistribution base_distribution(std::span<const TokenId> prefix) const = 0;
  void check_query(std::span<const TokenId> prefix, double temperature) const;
};

// p_i^(1/T) renormalized over all coordinates including EOK. T = 1 returns d
// unchanged.
TokenDistribution apply_temperature(const TokenDistribution& d, double temperature);

// Explicit conditional tables keyed by prefix. Prefixes missing from the
// table fall through to an optional generator model.
class TabularModel : public ModelInterface {
 public:
  TabularModel(std::uint32_t vocab_size, std::size_t max_len,
               TerminationMode mode = TerminationMode::Eok);

  std::uint32_t vocab_size() const override { return vocab_size_; }
  std::size_t max_len() const override { return max_len_; }
  TerminationMode mode() const noexcept { return mode_; }

  // Validates d and stores it for prefix.
  void set(TokenSeq prefix, TokenDistribution d);
  bool has(std::span<const TokenId> prefix) const;
  std::size_t table_size() const noexcept { return table_.size(); }
  void set_fallback(std::shared_ptr<const ModelInterface> generator);

  // Copies the generator's distributions for every prefix of every keyword
  // (and, in EOK mode, each keyword itself).
  static TabularModel materialize(const ModelInterface& generator, const ConstraintSet& s,
                                  TerminationMode mode);
  // Copies the generator's distributions for every prefix shorter than
  // max_len. Only sensible for tiny vocabularies.
  static TabularModel materialize_all(const ModelInterface& generator, TerminationMode mode);

  // Text format: header "vocab=<n> maxlen=<m> mode=<eok|prefixfree>", then
  // one "<prefix tokens>|<probs>|<eok>" line per table entry.
  static TabularModel read(std::istream& in);
  static TabularModel load(const std::filesystem::path& path);
  void write(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;

 protected:
  TokenDistribution base_distribution(std::span<const TokenId> prefix) const override;

 private:
  std::uint32_t vocab_size_;
  std::size_t max_len_;
  TerminationMode mode_;
  std::unordered_map<TokenSeq, TokenDistribution, TokenSeqHash> table_;
  std::shared_ptr<const ModelInterface> fallback_;
};

// Random Dirichlet-distributed conditionals derived from (seed, prefix), so
// the same seed always yields the same model.
class SeededRandomModel : public ModelInterface {
 public:
  // concentration is the Dirichlet parameter; small values give peaked
  // distributions. In PrefixFree mode EOK always has probability 0.
  SeededRandomModel(std::uint64_t seed, double concentration, std::uint32_t vocab_size,
                    std::size_t max_len, TerminationMode mode = TerminationMode::Eok);

  std::uint32_t vocab_size() const override { return vocab_size_; }
  std::size_t max_len() const override { return max_len_; }
  std::uint64_t seed() const noexcept { return seed_; }

 protected:
  TokenDistribution base_distribution(std::span<const TokenId> prefix) const override;

 private:
  std::uint64_t seed_;
  double concentration_;
  std::uint32_t vocab_size_;
  std::size_t max_len_;
  TerminationMode mode_;
};

// Product of conditionals along seq; in EOK mode times the EOK probability
// after the last token. Throws PrefixTooLongError.
double sequence_probability(const ModelInterface& m, std::span<const TokenId> seq,
                            double temperature, TerminationMode mode);
double sequence_log_probability(const ModelInterface& m, std::span<const TokenId> seq,
                                double temperature, TerminationMode mode);

// Worst-case bias construction: a two-token model over length-2 sequences
// with P(v1v1) = P(v1v2) = (1 - p_b)/2, P(v2v1) = p_b*eps and
// P(v2v2) = p_b*(1 - eps), EOK certain after two tokens, paired with
// S = {v1v1, v1v2, v2v1}. Token ids: v1 = 0, v2 = 1.
std::pair<TabularModel, ConstraintSet> worst_case_model(double p_b, double eps);

}  // namespace cdk
