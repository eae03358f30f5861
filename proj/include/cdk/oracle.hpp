#pragma once

// Exact ground truth by enumeration over small keyword sets: the target
// distribution P_S, the constrained-decoding distribution P^CD, the
// resampling distribution Q and the DISC output distribution, together with
// the closed-form bounds they are checked against.
//
// All oracles work on tabular models and use the full vocabulary as the
// candidate set (no top-M truncation). Temperature is 1.

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <utility>

#include "cdk/core.hpp"
#include "cdk/corpus.hpp"
#include "cdk/model.hpp"

namespace cdk {

struct ExactDistribution {
  std::map<TokenSeq, double> probs;

  static constexpr double kTolerance = 1e-9;

  double at(const TokenSeq& seq) const;
  double total() const;
  // Throws DegenerateError on negative entries or total outside 1 +/- 1e-9.
  void validate() const;
};

// "<tokens space-separated>\t<probability with 17 significant digits>" lines.
void write_distribution(std::ostream& out, const ExactDistribution& d);

struct EnumerationBudget {
  std::size_t max_set_size = 64;
  double max_tuples = 1e6;  // bound on |S|^(K-1)
};

// PrefixFree when s is prefix-free, EOK otherwise.
TerminationMode oracle_mode(const ConstraintSet& s) noexcept;

// 1 - sum over S of P_L(a). Throws EnumerationBudgetExceeded.
double p_bad(const TabularModel& m, const ConstraintSet& s, TerminationMode mode,
             const EnumerationBudget& budget = {});

// P_S(a) = P_L(a) / P_L(S). Throws DegenerateError when P_L(S) = 0.
ExactDistribution exact_target(const TabularModel& m, const ConstraintSet& s,
                               TerminationMode mode, const EnumerationBudget& budget = {});
// Per-step masking and renormalization multiplied down the prefix tree of S.
ExactDistribution exact_cd(const TabularModel& m, const ConstraintSet& s, TerminationMode mode,
                           const EnumerationBudget& budget = {});
// x(a): product of the valid probability mass along a's path.
std::map<TokenSeq, double> exact_importance(const TabularModel& m, const ConstraintSet& s,
                                            TerminationMode mode,
                                            const EnumerationBudget& budget = {});

// Q: draw K candidates from P^CD and keep one with probability
// proportional to x, computed as Q(a) = K * P^CD(a) * W(a) with W summed
// over the (K - 1)-tuples of rivals.
ExactDistribution exact_resample(const TabularModel& m, const ConstraintSet& s, std::size_t K,
                                 TerminationMode mode, const EnumerationBudget& budget = {});
// Q by enumerating every ordered K-tuple and crediting each winner directly.
ExactDistribution exact_resample_direct(const TabularModel& m, const ConstraintSet& s,
                                        std::size_t K, TerminationMode mode,
                                        const EnumerationBudget& budget = {});
// p_b^K * Q + (1 - p_b^K) * P_S.
ExactDistribution exact_disc(const TabularModel& m, const ConstraintSet& s, std::size_t K,
                             TerminationMode mode, const EnumerationBudget& budget = {});

struct KlResult {
  double value = 0.0;             // natural log; +infinity on support mismatch
  bool support_mismatch = false;  // p puts mass where q has none
};
KlResult kl(const ExactDistribution& p, const ExactDistribution& q);

// Upper bound on KL(P_S || P^K_IS):
// p_b^K * (sqrt(p_b / (K (1 - p_b))) + p_b / (2 K (1 - p_b))).
double disc_kl_bound(double p_b, std::size_t K);
// (1 - p_b^K) / (1 - p_b) + K p_b^K candidate draws per DISC sample.
double expected_steps(double p_b, std::size_t K);
// (1 + e) / (1 - p_b).
double expected_steps_ceiling(double p_b);

// (KL(P || tP + (1-t)Q), (1-t) KL(P || Q)). Throws SupportMismatchError when
// support(p) is not contained in support(q).
std::pair<double, double> mixture_kl_gap(const ExactDistribution& p, const ExactDistribution& q,
                                         double t);

// Closed-form KL(P_S || P^CD) for the worst_case_model construction.
double worst_case_kl(double p_b, double eps);

}  // namespace cdk
