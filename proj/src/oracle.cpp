#include "cdk/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>
#include <vector>

#include "cdk/errors.hpp"
#include "cdk/trie.hpp"

namespace cdk {

double ExactDistribution::at(const TokenSeq& seq) const {
  auto it = probs.find(seq);
  return it == probs.end() ? 0.0 : it->second;
}

double ExactDistribution::total() const {
  double sum = 0.0;
  for (const auto& [seq, p] : probs) sum += p;
  return sum;
}

void ExactDistribution::validate() const {
  for (const auto& [seq, p] : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw DegenerateError("negative or non-finite probability for [" + to_string(seq) + "]");
    }
  }
  if (std::abs(total() - 1.0) > kTolerance) throw DegenerateError("distribution does not sum to 1");
}

void write_distribution(std::ostream& out, const ExactDistribution& d) {
  char buf[40];
  for (const auto& [seq, p] : d.probs) {
    std::snprintf(buf, sizeof buf, "%.17g", p);
    out << to_string(seq) << '\t' << buf << '\n';
  }
}

TerminationMode oracle_mode(const ConstraintSet& s) noexcept {
  return check_prefix_free(s) ? TerminationMode::PrefixFree : TerminationMode::Eok;
}

namespace {

void check_budget(const ConstraintSet& s, const EnumerationBudget& budget) {
  if (s.size() > budget.max_set_size) {
    throw EnumerationBudgetExceeded("|S| = " + std::to_string(s.size()) + " exceeds the limit of " +
                                    std::to_string(budget.max_set_size));
  }
  if (s.empty()) throw DegenerateError("empty constraint set");
}

void check_mode(const ConstraintSet& s, TerminationMode mode) {
  if (mode == TerminationMode::PrefixFree && !check_prefix_free(s)) {
    throw DomainError("prefix-free termination needs a prefix-free keyword set");
  }
}

double pow_int(double base, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 0; i < k; ++i) r *= base;
  return r;
}

struct PathQuantities {
  std::map<TokenSeq, double> cd;          // constrained-decoding probability
  std::map<TokenSeq, double> importance;  // x(a)
};

// Walks the prefix tree of S, renormalizing the model over each node's valid
// continuations.
PathQuantities walk_paths(const TabularModel& m, const ConstraintSet& s, TerminationMode mode) {
  check_mode(s, mode);
  const Trie trie = Trie::build(s);
  PathQuantities out;

  struct Item {
    Trie::NodeId node;
    TokenSeq prefix;
    double cd;
    double x;
  };
  std::vector<Item> stack{{Trie::kRoot, {}, 1.0, 1.0}};
  while (!stack.empty()) {
    Item it = std::move(stack.back());
    stack.pop_back();
    const bool terminal = trie.terminal(it.node);
    if (terminal && mode == TerminationMode::PrefixFree) {
      out.cd[it.prefix] = it.cd;
      out.importance[it.prefix] = it.x;
      continue;
    }
    const auto d = m.next_distribution(it.prefix, 1.0);
    const auto labels = trie.labels(it.node);
    double mass = 0.0;
    for (TokenId t : labels) mass += d.probs.at(t);
    const bool eok = terminal && mode == TerminationMode::Eok;
    if (eok) mass += d.eok;
    if (!(mass > 0.0) && it.cd > 0.0) {
      throw DegenerateError("no valid continuation of [" + to_string(it.prefix) + "] has mass");
    }
    const double x = it.x * mass;
    if (eok) {
      out.cd[it.prefix] = mass > 0.0 ? it.cd * d.eok / mass : 0.0;
      out.importance[it.prefix] = x;
    }
    for (TokenId t : labels) {
      TokenSeq next = it.prefix;
      next.push_back(t);
      const double cd = mass > 0.0 ? it.cd * d.probs[t] / mass : 0.0;
      stack.push_back({*trie.child(it.node, t), std::move(next), cd, x});
    }
  }
  return out;
}

}  // namespace

double p_bad(const TabularModel& m, const ConstraintSet& s, TerminationMode mode,
             const EnumerationBudget& budget) {
  check_budget(s, budget);
  check_mode(s, mode);
  double in_set = 0.0;
  for (const auto& seq : s.sequences()) in_set += sequence_probability(m, seq, 1.0, mode);
  // Rounding can push the sum a few ulps past 1.
  return std::clamp(1.0 - in_set, 0.0, 1.0);
}

ExactDistribution exact_target(const TabularModel& m, const ConstraintSet& s,
                               TerminationMode mode, const EnumerationBudget& budget) {
  check_budget(s, budget);
  check_mode(s, mode);
  ExactDistribution out;
  double total = 0.0;
  for (const auto& seq : s.sequences()) {
    const double p = sequence_probability(m, seq, 1.0, mode);
    out.probs[seq] = p;
    total += p;
  }
  if (!(total > 0.0)) throw DegenerateError("P_L(S) = 0");
  for (auto& [seq, p] : out.probs) p /= total;
  return out;
}

ExactDistribution exact_cd(const TabularModel& m, const ConstraintSet& s, TerminationMode mode,
                           const EnumerationBudget& budget) {
  check_budget(s, budget);
  return {walk_paths(m, s, mode).cd};
}

std::map<TokenSeq, double> exact_importance(const TabularModel& m, const ConstraintSet& s,
                                            TerminationMode mode,
                                            const EnumerationBudget& budget) {
  check_budget(s, budget);
  return walk_paths(m, s, mode).importance;
}

namespace {

struct Pool {
  std::vector<TokenSeq> seqs;
  std::vector<double> cd;
  std::vector<double> x;
};

Pool make_pool(const TabularModel& m, const ConstraintSet& s, TerminationMode mode) {
  const auto q = walk_paths(m, s, mode);
  Pool pool;
  for (const auto& [seq, p] : q.cd) {
    pool.seqs.push_back(seq);
    pool.cd.push_back(p);
    pool.x.push_back(q.importance.at(seq));
  }
  return pool;
}

// Calls f(weight, index tuple) for every ordered tuple of the given length.
template <typename F>
void for_each_tuple(const Pool& pool, std::size_t length, F&& f) {
  const std::size_t n = pool.seqs.size();
  std::vector<std::size_t> idx(length, 0);
  for (;;) {
    double w = 1.0;
    for (auto i : idx) w *= pool.cd[i];
    if (w > 0.0) f(w, idx);
    std::size_t pos = 0;
    while (pos < length && ++idx[pos] == n) idx[pos++] = 0;
    if (pos == length) return;
  }
}

void check_tuples(std::size_t n, std::size_t length, double limit) {
  if (std::pow(static_cast<double>(n), static_cast<double>(length)) > limit) {
    throw EnumerationBudgetExceeded(std::to_string(n) + "^" + std::to_string(length) +
                                    " tuples exceed the enumeration limit");
  }
}

}  // namespace

ExactDistribution exact_resample(const TabularModel& m, const ConstraintSet& s, std::size_t K,
                                 TerminationMode mode, const EnumerationBudget& budget) {
  if (K == 0) throw DomainError("K must be at least 1");
  check_budget(s, budget);
  check_tuples(s.size(), K - 1, budget.max_tuples);
  const Pool pool = make_pool(m, s, mode);
  const std::size_t n = pool.seqs.size();

  // W(a) = sum over rival tuples of prod cd(rival) * x(a) / (x(a) + sum x(rival)).
  std::vector<double> win(n, 0.0);
  for_each_tuple(pool, K - 1, [&](double w, const std::vector<std::size_t>& rivals) {
    double rival_x = 0.0;
    for (auto r : rivals) rival_x += pool.x[r];
    for (std::size_t i = 0; i < n; ++i) {
      const double denom = pool.x[i] + rival_x;
      if (denom > 0.0) win[i] += w * pool.x[i] / denom;
    }
  });
  ExactDistribution out;
  for (std::size_t i = 0; i < n; ++i) {
    out.probs[pool.seqs[i]] = static_cast<double>(K) * pool.cd[i] * win[i];
  }
  return out;
}

ExactDistribution exact_resample_direct(const TabularModel& m, const ConstraintSet& s,
                                        std::size_t K, TerminationMode mode,
                                        const EnumerationBudget& budget) {
  if (K == 0) throw DomainError("K must be at least 1");
  check_budget(s, budget);
  check_tuples(s.size(), K, budget.max_tuples * static_cast<double>(budget.max_set_size));
  const Pool pool = make_pool(m, s, mode);
  std::vector<double> q(pool.seqs.size(), 0.0);
  for_each_tuple(pool, K, [&](double w, const std::vector<std::size_t>& tuple) {
    double total_x = 0.0;
    for (auto j : tuple) total_x += pool.x[j];
    if (!(total_x > 0.0)) return;
    for (auto j : tuple) q[j] += w * pool.x[j] / total_x;
  });
  ExactDistribution out;
  for (std::size_t i = 0; i < q.size(); ++i) out.probs[pool.seqs[i]] = q[i];
  return out;
}

ExactDistribution exact_disc(const TabularModel& m, const ConstraintSet& s, std::size_t K,
                             TerminationMode mode, const EnumerationBudget& budget) {
  const auto q = exact_resample(m, s, K, mode, budget);
  const auto target = exact_target(m, s, mode, budget);
  const double reject_all = pow_int(p_bad(m, s, mode, budget), K);
  ExactDistribution out;
  for (const auto& [seq, p] : target.probs) {
    out.probs[seq] = reject_all * q.at(seq) + (1.0 - reject_all) * p;
  }
  return out;
}

KlResult kl(const ExactDistribution& p, const ExactDistribution& q) {
  KlResult r;
  for (const auto& [seq, pv] : p.probs) {
    if (pv <= 0.0) continue;
    const double qv = q.at(seq);
    if (qv <= 0.0) {
      r.support_mismatch = true;
      r.value = std::numeric_limits<double>::infinity();
      return r;
    }
    r.value += pv * std::log(pv / qv);
  }
  return r;
}

double disc_kl_bound(double p_b, std::size_t K) {
  if (!(p_b >= 0.0 && p_b < 1.0)) throw DomainError("p_b must lie in [0, 1)");
  if (K == 0) throw DomainError("K must be at least 1");
  const double k = static_cast<double>(K);
  const double ratio = p_b / (k * (1.0 - p_b));
  return pow_int(p_b, K) * (std::sqrt(ratio) + 0.5 * ratio);
}

double expected_steps(double p_b, std::size_t K) {
  if (!(p_b >= 0.0 && p_b < 1.0)) throw DomainError("p_b must lie in [0, 1)");
  if (K == 0) throw DomainError("K must be at least 1");
  const double pk = pow_int(p_b, K);
  return (1.0 - pk) / (1.0 - p_b) + static_cast<double>(K) * pk;
}

double expected_steps_ceiling(double p_b) {
  if (!(p_b >= 0.0 && p_b < 1.0)) throw DomainError("p_b must lie in [0, 1)");
  return (1.0 + std::numbers::e) / (1.0 - p_b);
}

std::pair<double, double> mixture_kl_gap(const ExactDistribution& p, const ExactDistribution& q,
                                         double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("t must lie in [0, 1]");
  const auto base = kl(p, q);
  if (base.support_mismatch) throw SupportMismatchError("support of p is not inside support of q");
  ExactDistribution mix;
  for (const auto& [seq, v] : q.probs) mix.probs[seq] += (1.0 - t) * v;
  for (const auto& [seq, v] : p.probs) mix.probs[seq] += t * v;
  return {kl(p, mix).value, (1.0 - t) * base.value};
}

double worst_case_kl(double p_b, double eps) {
  if (!(p_b > 0.0 && p_b < 1.0)) throw DomainError("p_b must lie in (0, 1)");
  if (!(eps > 0.0 && eps <= 1.0)) throw DomainError("eps must lie in (0, 1]");
  const double z = 1.0 - p_b + p_b * eps;
  const double kappa = (1.0 - p_b) / z;
  return kappa * std::log(kappa / (1.0 - p_b)) + (p_b * eps / z) * std::log(eps / z);
}

}  // namespace cdk
