#include "cdk/sampler.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numeric>

#include "cdk/errors.hpp"
#include "cdk/verifier.hpp"

namespace cdk {

void DiscConfig::validate(const SortedIndex& idx) const {
  if (K == 0) throw DomainError("K must be at least 1");
  if (M == 0) throw DomainError("M must be at least 1");
  if (M > idx.vocab_size) {
    throw DomainError("M = " + std::to_string(M) + " exceeds the vocabulary size " +
                      std::to_string(idx.vocab_size));
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw DomainError("temperature must be positive and finite");
  }
  if (termination == TerminationMode::PrefixFree && !idx.prefix_free) {
    throw DomainError("prefix-free termination needs a prefix-free keyword set; use eok");
  }
}

TerminationMode default_termination(const SortedIndex& idx) noexcept {
  return idx.prefix_free ? TerminationMode::PrefixFree : TerminationMode::Eok;
}

double Candidate::importance() const { return std::exp(log_importance); }
double SampleOutcome::importance() const { return std::exp(log_importance); }

std::string_view to_string(AcceptedBy a) noexcept {
  return a == AcceptedBy::Accept ? "ACCEPT" : "FALLBACK_RESAMPLE";
}

std::vector<TokenId> top_m_tokens(std::span<const double> probs, std::uint32_t M) {
  std::vector<TokenId> ids(probs.size());
  std::iota(ids.begin(), ids.end(), TokenId{0});
  if (M >= probs.size()) return ids;
  auto before = [&](TokenId a, TokenId b) {
    return probs[a] != probs[b] ? probs[a] > probs[b] : a < b;
  };
  std::nth_element(ids.begin(), ids.begin() + M, ids.end(), before);
  ids.resize(M);
  std::sort(ids.begin(), ids.end(), before);
  return ids;
}

std::size_t resample_index(std::span<const double> log_weights, Rng& rng) {
  if (log_weights.empty()) throw FallbackDegenerateError("empty resampling pool");
  double top = -std::numeric_limits<double>::infinity();
  for (double w : log_weights) {
    if (std::isnan(w) || w == std::numeric_limits<double>::infinity()) {
      throw FallbackDegenerateError("non-finite importance weight");
    }
    top = std::max(top, w);
  }
  if (!std::isfinite(top)) throw FallbackDegenerateError("all importance weights are zero");
  std::vector<double> w(log_weights.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    w[j] = std::exp(log_weights[j] - top);
    sum += w[j];
  }
  const double u = rng.uniform() * sum;
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    if (w[j] <= 0.0) continue;
    acc += w[j];
    last = j;
    if (u < acc) return j;
  }
  return last;
}

DiscSampler::DiscSampler(const ModelInterface& model, const SortedIndex& idx, DiscConfig cfg)
    : model_(model), idx_(idx), cfg_(cfg) {
  cfg_.validate(idx_);
  if (model_.vocab_size() != idx_.vocab_size) {
    throw DomainError("model and index vocabularies differ");
  }
  guard_ = cfg_.max_len_guard ? cfg_.max_len_guard : idx_.max_len();
}

Mask DiscSampler::step_mask(std::span<const TokenId> prefix, const TokenDistribution& d) const {
  Mask mask;
  if (prefix.size() < idx_.max_len()) {
    if (cfg_.M >= idx_.vocab_size) {
      mask = full_valid_set(idx_, prefix);
    } else {
      const auto top = top_m_tokens(d.probs, cfg_.M);
      mask = ppv_verify(idx_, prefix, top);
    }
  } else {
    mask = Mask(idx_.vocab_size);
    mask.eok_allowed = is_member(idx_, prefix);
  }
  if (cfg_.termination == TerminationMode::PrefixFree) mask.eok_allowed = false;
  return mask;
}

Candidate DiscSampler::sample_candidate(Rng& rng) const {
  Candidate c;
  for (;;) {
    if (c.sequence.size() > guard_) {
      throw MaxLenExceededError("candidate grew past " + std::to_string(guard_) + " tokens");
    }
    const auto d = model_.next_distribution(c.sequence, cfg_.temperature);
    const auto mask = step_mask(c.sequence, d);
    MaskedDistribution step;
    try {
      step = normalize_masked(d, mask);
    } catch (const ZeroMassError&) {
      throw DeadEndError("no verified continuation of [" + to_string(c.sequence) +
                         "] has probability mass");
    }
    c.log_importance += std::log(step.mass);

    // Inverse-CDF draw over tokens in ascending id order, then EOK.
    const double u = rng.uniform();
    double acc = 0.0;
    std::optional<TokenId> pick;
    bool eok = false;
    for (std::size_t t = 0; t < step.dist.probs.size(); ++t) {
      if (!mask.bits[t] || step.dist.probs[t] <= 0.0) continue;
      acc += step.dist.probs[t];
      pick = static_cast<TokenId>(t);
      if (u < acc) break;
    }
    if (!(u < acc) && mask.eok_allowed && step.dist.eok > 0.0) {
      eok = true;
    } else if (!pick) {
      eok = true;  // only EOK carries mass
    }

    if (eok) {
      assert(is_member(idx_, c.sequence));
      return c;
    }
    c.sequence.push_back(*pick);
    if (cfg_.termination == TerminationMode::PrefixFree && is_member(idx_, c.sequence)) {
      return c;
    }
  }
}

SampleOutcome DiscSampler::disc_sample(Rng& rng) const {
  SampleOutcome out;
  for (std::uint64_t k = 0; cfg_.K == DiscConfig::kUnbounded || k < cfg_.K; ++k) {
    auto c = sample_candidate(rng);
    // Masking guarantees membership at termination.
    assert(is_member(idx_, c.sequence));
    ++out.rounds_used;
    ++out.candidates_drawn;
    out.trace.push_back({c.sequence, c.log_importance, false});
    const double eps = rng.uniform();
    if (c.importance() > eps) {
      out.sequence = std::move(c.sequence);
      out.log_importance = c.log_importance;
      out.accepted_by = AcceptedBy::Accept;
      return out;
    }
  }

  std::vector<Candidate> pool;
  std::vector<double> log_w;
  pool.reserve(cfg_.K);
  for (std::uint64_t k = 0; k < cfg_.K; ++k) {
    pool.push_back(sample_candidate(rng));
    log_w.push_back(pool.back().log_importance);
    ++out.candidates_drawn;
    out.trace.push_back({pool.back().sequence, pool.back().log_importance, true});
  }
  const auto j = resample_index(log_w, rng);
  out.sequence = std::move(pool[j].sequence);
  out.log_importance = pool[j].log_importance;
  out.accepted_by = AcceptedBy::FallbackResample;
  return out;
}

TokenSeq DiscSampler::cd_sample(Rng& rng) const { return sample_candidate(rng).sequence; }

double DiscSampler::log_importance(std::span<const TokenId> seq) const {
  if (!is_member(idx_, seq)) throw NotMemberError("[" + to_string(seq) + "] is not a keyword");
  double logx = 0.0;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto prefix = seq.first(i);
    const auto d = model_.next_distribution(prefix, cfg_.temperature);
    const auto mask = step_mask(prefix, d);
    if (!mask.bits[seq[i]] || d.probs[seq[i]] <= 0.0) {
      return -std::numeric_limits<double>::infinity();
    }
    logx += std::log(masked_mass(d, mask));
  }
  if (cfg_.termination == TerminationMode::Eok) {
    const auto d = model_.next_distribution(seq, cfg_.temperature);
    const auto mask = step_mask(seq, d);
    if (d.eok <= 0.0) return -std::numeric_limits<double>::infinity();
    logx += std::log(masked_mass(d, mask));
  }
  return logx;
}

double DiscSampler::importance_score(std::span<const TokenId> seq) const {
  return std::exp(log_importance(seq));
}

}  // namespace cdk
