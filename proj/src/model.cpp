#include "cdk/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <vector>

#include "cdk/errors.hpp"
#include "cdk/rng.hpp"

namespace cdk {

std::string_view to_string(TerminationMode m) noexcept {
  return m == TerminationMode::Eok ? "eok" : "prefixfree";
}

TerminationMode parse_termination(std::string_view text) {
  if (text == "eok") return TerminationMode::Eok;
  if (text == "prefixfree") return TerminationMode::PrefixFree;
  throw DomainError("unknown termination mode '" + std::string(text) + "'");
}

void ModelInterface::check_query(std::span<const TokenId> prefix, double temperature) const {
  if (prefix.size() >= max_len()) {
    throw PrefixTooLongError("prefix of length " + std::to_string(prefix.size()) +
                             " reaches the model limit of " + std::to_string(max_len()));
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw DomainError("temperature must be positive and finite");
  }
}

TokenDistribution ModelInterface::next_distribution(std::span<const TokenId> prefix,
                                                    double temperature) const {
  check_query(prefix, temperature);
  return apply_temperature(base_distribution(prefix), temperature);
}

TokenDistribution apply_temperature(const TokenDistribution& d, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw DomainError("temperature must be positive and finite");
  }
  if (temperature == 1.0) return d;

  // Work with log p / T to avoid overflow and underflow for small T.
  const double inv = 1.0 / temperature;
  double top = -std::numeric_limits<double>::infinity();
  auto scaled = [&](double p) {
    return p > 0.0 ? std::log(p) * inv : -std::numeric_limits<double>::infinity();
  };
  for (double p : d.probs) top = std::max(top, scaled(p));
  top = std::max(top, scaled(d.eok));
  if (!std::isfinite(top)) throw InvalidDistributionError("distribution has no positive entry");

  TokenDistribution out;
  out.probs.resize(d.probs.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < d.probs.size(); ++i) {
    out.probs[i] = d.probs[i] > 0.0 ? std::exp(scaled(d.probs[i]) - top) : 0.0;
    sum += out.probs[i];
  }
  out.eok = d.eok > 0.0 ? std::exp(scaled(d.eok) - top) : 0.0;
  sum += out.eok;
  for (double& p : out.probs) p /= sum;
  out.eok /= sum;
  return out;
}

// ---------------------------------------------------------------------------
// TabularModel

TabularModel::TabularModel(std::uint32_t vocab_size, std::size_t max_len, TerminationMode mode)
    : vocab_size_(vocab_size), max_len_(max_len), mode_(mode) {
  if (vocab_size == 0) throw DomainError("vocabulary size must be positive");
  if (max_len == 0) throw DomainError("max_len must be positive");
}

void TabularModel::set(TokenSeq prefix, TokenDistribution d) {
  if (prefix.size() >= max_len_) throw PrefixTooLongError("table prefix reaches max_len");
  for (TokenId t : prefix) {
    if (t >= vocab_size_) throw TokenOutOfRangeError("table prefix token out of range");
  }
  if (d.probs.size() != vocab_size_) {
    throw InvalidDistributionError("distribution has " + std::to_string(d.probs.size()) +
                                   " entries, expected " + std::to_string(vocab_size_));
  }
  d.validate();
  table_.insert_or_assign(std::move(prefix), std::move(d));
}

bool TabularModel::has(std::span<const TokenId> prefix) const {
  return table_.contains(TokenSeq(prefix.begin(), prefix.end()));
}

void TabularModel::set_fallback(std::shared_ptr<const ModelInterface> generator) {
  if (generator && (generator->vocab_size() != vocab_size_ || generator->max_len() < max_len_)) {
    throw DomainError("fallback generator does not match the table's vocabulary or length");
  }
  fallback_ = std::move(generator);
}

TokenDistribution TabularModel::base_distribution(std::span<const TokenId> prefix) const {
  auto it = table_.find(TokenSeq(prefix.begin(), prefix.end()));
  if (it != table_.end()) return it->second;
  if (fallback_) return fallback_->next_distribution(prefix, 1.0);
  throw DomainError("no table entry for prefix [" + to_string(prefix) + "]");
}

TabularModel TabularModel::materialize(const ModelInterface& generator, const ConstraintSet& s,
                                       TerminationMode mode) {
  TabularModel out(generator.vocab_size(), generator.max_len(), mode);
  for (const auto& seq : s.sequences()) {
    const std::size_t upto = mode == TerminationMode::Eok ? seq.size() : seq.size() - 1;
    for (std::size_t len = 0; len <= upto; ++len) {
      TokenSeq prefix(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(len));
      if (!out.table_.contains(prefix)) {
        auto d = generator.next_distribution(prefix, 1.0);
        out.set(std::move(prefix), std::move(d));
      }
    }
  }
  return out;
}

TabularModel TabularModel::materialize_all(const ModelInterface& generator, TerminationMode mode) {
  TabularModel out(generator.vocab_size(), generator.max_len(), mode);
  std::vector<TokenSeq> frontier{{}};
  while (!frontier.empty()) {
    std::vector<TokenSeq> next;
    for (auto& prefix : frontier) {
      out.set(prefix, generator.next_distribution(prefix, 1.0));
      if (prefix.size() + 1 < out.max_len_) {
        for (TokenId t = 0; t < out.vocab_size_; ++t) {
          TokenSeq ext = prefix;
          ext.push_back(t);
          next.push_back(std::move(ext));
        }
      }
    }
    frontier = std::move(next);
  }
  return out;
}

TabularModel TabularModel::read(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw ParseError("model table: missing header");
  std::istringstream hs(header);
  std::string field;
  std::uint64_t vocab = 0;
  std::uint64_t maxlen = 0;
  std::string mode;
  while (hs >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw ParseError("model table: bad header field '" + field + "'");
    const auto key = field.substr(0, eq);
    const auto value = field.substr(eq + 1);
    try {
      if (key == "vocab") {
        vocab = std::stoull(value);
      } else if (key == "maxlen") {
        maxlen = std::stoull(value);
      } else if (key == "mode") {
        mode = value;
      } else {
        throw ParseError("model table: unknown header key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      throw ParseError("model table: bad header value '" + field + "'");
    }
  }
  if (vocab == 0 || vocab > 0xFFFFFFFEull || maxlen == 0 || mode.empty()) {
    throw ParseError("model table: header needs vocab, maxlen and mode");
  }
  TerminationMode m;
  try {
    m = parse_termination(mode);
  } catch (const DomainError& e) {
    throw ParseError(std::string("model table: ") + e.what());
  }

  TabularModel model(static_cast<std::uint32_t>(vocab), static_cast<std::size_t>(maxlen), m);
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = "model table line " + std::to_string(lineno) + ": ";
    const auto bar1 = line.find('|');
    const auto bar2 = bar1 == std::string::npos ? bar1 : line.find('|', bar1 + 1);
    if (bar2 == std::string::npos) throw ParseError(where + "expected 'prefix|probs|eok'");
    TokenDistribution d;
    TokenSeq prefix;
    try {
      prefix = parse_tokens(line.substr(0, bar1));
      std::istringstream ps(line.substr(bar1 + 1, bar2 - bar1 - 1));
      std::string tok;
      while (ps >> tok) d.probs.push_back(std::stod(tok));
      d.eok = std::stod(line.substr(bar2 + 1));
    } catch (const std::logic_error&) {
      throw ParseError(where + "malformed number");
    } catch (const ParseError&) {
      throw ParseError(where + "malformed prefix");
    }
    if (model.table_.contains(prefix)) throw ParseError(where + "duplicate prefix");
    try {
      model.set(std::move(prefix), std::move(d));
    } catch (const Error& e) {
      throw ParseError(where + e.what());
    }
  }
  return model;
}

TabularModel TabularModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model table " + path.string());
  return read(in);
}

void TabularModel::write(std::ostream& out) const {
  std::vector<const std::pair<const TokenSeq, TokenDistribution>*> entries;
  for (const auto& e : table_) entries.push_back(&e);
  std::sort(entries.begin(), entries.end(),
            [](auto* a, auto* b) { return lex_compare(a->first, b->first) < 0; });
  out << "vocab=" << vocab_size_ << " maxlen=" << max_len_ << " mode=" << to_string(mode_) << '\n';
  char buf[32];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  };
  for (const auto* e : entries) {
    out << to_string(e->first) << '|';
    for (std::size_t i = 0; i < e->second.probs.size(); ++i) {
      if (i) out << ' ';
      out << num(e->second.probs[i]);
    }
    out << '|' << num(e->second.eok) << '\n';
  }
}

void TabularModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write(out);
  if (!out) throw IoError("write to " + path.string() + " failed");
}

// ---------------------------------------------------------------------------
// SeededRandomModel

namespace {

double standard_normal(Rng& rng) {
  const double u1 = rng.uniform();
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log1p(-u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// log of a Gamma(alpha, 1) draw (Marsaglia-Tsang, boosted for alpha < 1).
double log_gamma_draw(Rng& rng, double alpha) {
  double boost = 0.0;
  if (alpha < 1.0) {
    boost = std::log1p(-rng.uniform()) / alpha;  // log(U^(1/alpha)), U in (0, 1]
    alpha += 1.0;
  }
  const double d = alpha - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    const double x = standard_normal(rng);
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    const double u = rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x ||
        std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
      return std::log(d * v) + boost;
    }
  }
}

}  // namespace

SeededRandomModel::SeededRandomModel(std::uint64_t seed, double concentration,
                                     std::uint32_t vocab_size, std::size_t max_len,
                                     TerminationMode mode)
    : seed_(seed),
      concentration_(concentration),
      vocab_size_(vocab_size),
      max_len_(max_len),
      mode_(mode) {
  if (!(concentration > 0.0) || !std::isfinite(concentration)) {
    throw DomainError("concentration must be positive");
  }
  if (vocab_size == 0) throw DomainError("vocabulary size must be positive");
  if (max_len == 0) throw DomainError("max_len must be positive");
}

TokenDistribution SeededRandomModel::base_distribution(std::span<const TokenId> prefix) const {
  std::uint64_t h = mix64(seed_);
  for (TokenId t : prefix) h = mix64(h ^ t);
  h = mix64(h ^ prefix.size());
  Rng rng(h);

  const std::size_t coords = vocab_size_ + (mode_ == TerminationMode::Eok ? 1 : 0);
  std::vector<double> logs(coords);
  double top = -std::numeric_limits<double>::infinity();
  for (auto& l : logs) {
    l = log_gamma_draw(rng, concentration_);
    top = std::max(top, l);
  }
  double sum = 0.0;
  for (auto& l : logs) {
    l = std::exp(l - top);
    sum += l;
  }
  TokenDistribution d;
  d.probs.resize(vocab_size_);
  for (std::size_t i = 0; i < vocab_size_; ++i) d.probs[i] = logs[i] / sum;
  d.eok = mode_ == TerminationMode::Eok ? logs[vocab_size_] / sum : 0.0;
  return d;
}

// ---------------------------------------------------------------------------

double sequence_log_probability(const ModelInterface& m, std::span<const TokenId> seq,
                                double temperature, TerminationMode mode) {
  if (seq.size() > m.max_len()) throw PrefixTooLongError("sequence longer than model max_len");
  double logp = 0.0;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto d = m.next_distribution(seq.first(i), temperature);
    if (seq[i] >= d.probs.size()) throw TokenOutOfRangeError("token outside model vocabulary");
    logp += std::log(d.probs[seq[i]]);
  }
  if (mode == TerminationMode::Eok) logp += std::log(m.next_distribution(seq, temperature).eok);
  return logp;
}

double sequence_probability(const ModelInterface& m, std::span<const TokenId> seq,
                            double temperature, TerminationMode mode) {
  if (seq.size() > m.max_len()) throw PrefixTooLongError("sequence longer than model max_len");
  double p = 1.0;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto d = m.next_distribution(seq.first(i), temperature);
    if (seq[i] >= d.probs.size()) throw TokenOutOfRangeError("token outside model vocabulary");
    p *= d.probs[seq[i]];
  }
  if (mode == TerminationMode::Eok) p *= m.next_distribution(seq, temperature).eok;
  return p;
}

std::pair<TabularModel, ConstraintSet> worst_case_model(double p_b, double eps) {
  if (!(p_b > 0.0 && p_b < 1.0)) throw DomainError("p_b must lie in (0, 1)");
  if (!(eps > 0.0 && eps < 1.0)) throw DomainError("eps must lie in (0, 1)");
  TabularModel m(2, 3, TerminationMode::Eok);
  m.set({}, {{1.0 - p_b, p_b}, 0.0});
  m.set({0}, {{0.5, 0.5}, 0.0});
  m.set({1}, {{eps, 1.0 - eps}, 0.0});
  for (TokenId a = 0; a < 2; ++a) {
    for (TokenId b = 0; b < 2; ++b) m.set({a, b}, {{0.0, 0.0}, 1.0});
  }
  ConstraintSet s(Vocabulary(2), {{0, 0}, {0, 1}, {1, 0}});
  return {std::move(m), std::move(s)};
}

}  // namespace cdk
