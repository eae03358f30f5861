#pragma once

// Dynamic importance sampling for constrained decoding.
//
// A candidate is drawn by masked, renormalized autoregressive sampling; its
// importance x(a) is the product of the masked probability mass at every
// step. The sampler accepts a candidate with probability x(a) for at most K
// rounds. If every round is rejected it draws K fresh candidates and returns
// one of them with probability proportional to x. Accepted draws follow
// P_S(a) = P_L(a) / P_L(S) exactly; the fallback is what keeps a finite K
// biased, and that bias decays like p_b^K.

#include <cstdint>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "cdk/core.hpp"
#include "cdk/corpus.hpp"
#include "cdk/model.hpp"
#include "cdk/rng.hpp"

namespace cdk {

struct DiscConfig {
  static constexpr std::uint64_t kUnbounded = std::numeric_limits<std::uint64_t>::max();

  std::uint64_t K = 4;  // acceptance rounds; kUnbounded loops until acceptance
  std::uint32_t M = 50;  // top-M candidate tokens verified per step
  double temperature = 1.0;
  TerminationMode termination = TerminationMode::PrefixFree;
  std::size_t max_len_guard = 0;  // 0: longest keyword in the index
  std::uint64_t seed = 0;

  // Throws DomainError for K = 0, M = 0, M > vocab size, non-positive
  // temperature or PrefixFree termination on a non-prefix-free index.
  void validate(const SortedIndex& idx) const;
};

// Termination used when none is requested: PrefixFree when the keyword set
// allows it, EOK otherwise.
TerminationMode default_termination(const SortedIndex& idx) noexcept;

struct Candidate {
  TokenSeq sequence;
  double log_importance = 0.0;  // log x(a)
  double importance() const;
};

enum class AcceptedBy { Accept, FallbackResample };
std::string_view to_string(AcceptedBy a) noexcept;

struct TraceEntry {
  TokenSeq sequence;
  double log_importance = 0.0;
  bool fallback = false;  // drawn for the resampling pool
};

struct SampleOutcome {
  TokenSeq sequence;
  double log_importance = 0.0;
  std::uint64_t rounds_used = 0;       // acceptance-phase draws
  std::uint64_t candidates_drawn = 0;  // rounds_used plus fallback pool draws
  AcceptedBy accepted_by = AcceptedBy::Accept;
  std::vector<TraceEntry> trace;

  double importance() const;
};

class DiscSampler {
 public:
  // Validates cfg against idx. The model and index must outlive the sampler.
  DiscSampler(const ModelInterface& model, const SortedIndex& idx, DiscConfig cfg);

  const DiscConfig& config() const noexcept { return cfg_; }

  // One masked autoregressive draw. Throws DeadEndError when no verified
  // continuation carries mass and MaxLenExceededError when the length
  // guard trips.
  Candidate sample_candidate(Rng& rng) const;

  SampleOutcome disc_sample(Rng& rng) const;

  // Plain constrained decoding: one candidate, returned unconditionally.
  TokenSeq cd_sample(Rng& rng) const;

  // Recomputes log x(seq) along seq's path with the same top-M, temperature
  // and termination settings the sampler uses. Returns -infinity when seq is
  // unreachable (a step token falls outside the verified top-M set). Throws
  // NotMemberError when seq is not a keyword.
  double log_importance(std::span<const TokenId> seq) const;
  double importance_score(std::span<const TokenId> seq) const;

  // The per-step mask: top-M tokens verified against the index, plus EOK
  // when termination is EOK and prefix is a keyword.
  Mask step_mask(std::span<const TokenId> prefix, const TokenDistribution& d) const;

 private:
  const ModelInterface& model_;
  const SortedIndex& idx_;
  DiscConfig cfg_;
  std::size_t guard_;
};

// Token ids of the M largest probabilities, ties broken by lower id.
std::vector<TokenId> top_m_tokens(std::span<const double> probs, std::uint32_t M);

// Index j drawn with probability w_j / sum(w) for w_j = exp(log_weights[j]),
// evaluated with log-sum-exp. Throws FallbackDegenerateError when every
// weight is zero or a weight is not finite.
std::size_t resample_index(std::span<const double> log_weights, Rng& rng);

}  // namespace cdk
