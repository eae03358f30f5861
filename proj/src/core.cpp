#include "cdk/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "cdk/errors.hpp"

namespace cdk {

Vocabulary::Vocabulary(std::uint32_t size) : size_(size) {
  if (size == 0) throw DomainError("vocabulary size must be positive");
}

Vocabulary::Vocabulary(std::uint32_t size, std::vector<std::string> display)
    : Vocabulary(size) {
  if (display.size() != size) throw DomainError("display table size does not match vocabulary");
  std::unordered_set<std::string> seen;
  for (const auto& s : display) {
    if (!seen.insert(s).second) throw DomainError("duplicate display string '" + s + "'");
  }
  display_ = std::move(display);
}

const std::string& Vocabulary::display(TokenId t) const {
  if (display_.empty()) throw DomainError("vocabulary has no display strings");
  return display_.at(t);
}

std::optional<TokenId> Vocabulary::lookup(const std::string& text) const {
  auto it = std::find(display_.begin(), display_.end(), text);
  if (it == display_.end()) return std::nullopt;
  return static_cast<TokenId>(it - display_.begin());
}

double TokenDistribution::total() const noexcept {
  double sum = 0.0;
  for (double p : probs) sum += p;
  return sum + eok;
}

void TokenDistribution::validate(double tolerance) const {
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!std::isfinite(probs[i]) || probs[i] < 0.0) {
      throw InvalidDistributionError("probability of token " + std::to_string(i) +
                                     " is negative or not finite");
    }
  }
  if (!std::isfinite(eok) || eok < 0.0) {
    throw InvalidDistributionError("EOK probability is negative or not finite");
  }
  const double sum = total();
  if (std::abs(sum - 1.0) > tolerance) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "distribution sums to " << sum;
    throw InvalidDistributionError(msg.str());
  }
}

std::size_t Mask::count() const noexcept {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), true));
}

std::vector<TokenId> Mask::tokens() const {
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i]) out.push_back(static_cast<TokenId>(i));
  }
  return out;
}

std::strong_ordering lex_compare(std::span<const TokenId> a, std::span<const TokenId> b) noexcept {
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i] != b[i]) return a[i] <=> b[i];
  }
  return a.size() <=> b.size();
}

bool is_prefix(std::span<const TokenId> a, std::span<const TokenId> b) noexcept {
  return a.size() <= b.size() && std::equal(a.begin(), a.end(), b.begin());
}

double masked_mass(const TokenDistribution& d, const Mask& mask) {
  if (mask.vocab_size() != d.vocab_size()) throw DomainError("mask and distribution sizes differ");
  double mass = 0.0;
  for (std::size_t i = 0; i < d.probs.size(); ++i) {
    if (mask.bits[i]) mass += d.probs[i];
  }
  if (mask.eok_allowed) mass += d.eok;
  return mass;
}

MaskedDistribution normalize_masked(const TokenDistribution& d, const Mask& mask) {
  const double mass = masked_mass(d, mask);
  if (!(mass > 0.0)) throw ZeroMassError("masked probability mass is zero");
  MaskedDistribution out;
  out.mass = mass;
  out.dist.probs.assign(d.probs.size(), 0.0);
  for (std::size_t i = 0; i < d.probs.size(); ++i) {
    if (mask.bits[i]) out.dist.probs[i] = d.probs[i] / mass;
  }
  out.dist.eok = mask.eok_allowed ? d.eok / mass : 0.0;
  return out;
}

std::string to_string(std::span<const TokenId> seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(seq[i]);
  }
  return out;
}

TokenSeq parse_tokens(const std::string& text) {
  TokenSeq out;
  const char* p = text.data();
  const char* end = p + text.size();
  while (p < end) {
    while (p < end && (*p == ' ' || *p == '\t' || *p == '\r' || *p == '\n')) ++p;
    if (p == end) break;
    std::uint64_t v = 0;
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc{} || (next < end && *next != ' ' && *next != '\t' && *next != '\r' &&
                              *next != '\n')) {
      throw ParseError("not a token id: '" + text + "'");
    }
    if (v >= 0xFFFFFFFFull) throw ParseError("token id out of range: '" + text + "'");
    out.push_back(static_cast<TokenId>(v));
    p = next;
  }
  return out;
}

std::size_t TokenSeqHash::operator()(const TokenSeq& s) const noexcept {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (TokenId t : s) {
    h ^= t;
    h *= 0x100000001b3ull;
  }
  h ^= s.size();
  h *= 0x100000001b3ull;
  return static_cast<std::size_t>(h);
}

}  // namespace cdk
