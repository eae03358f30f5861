#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "cdk/errors.hpp"
#include "cdk/oracle.hpp"
#include "cdk/sampler.hpp"
#include "cdk/verifier.hpp"
#include "test_support.hpp"

using namespace cdk;
using cdk::testing::dist;
using cdk::testing::product_keywords;
using cdk::testing::product_model;

namespace {

DiscConfig config(std::uint64_t K, std::uint32_t M, TerminationMode mode) {
  DiscConfig c;
  c.K = K;
  c.M = M;
  c.termination = mode;
  return c;
}

// Product example with every bit of mass inside S.
TabularModel product_all_valid() {
  auto m = product_model();
  m.set({0}, dist({0, 0, 1, 0, 0}));
  m.set({1, 0}, dist({0, 0, 0, 0, 1}));
  return m;
}

}  // namespace

TEST_CASE("importance along the product example paths") {
  const auto m = product_model();
  const auto idx = build_index(product_keywords());
  const DiscSampler s(m, idx, config(4, 5, TerminationMode::PrefixFree));
  CHECK(s.importance_score(TokenSeq{0, 2}) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(s.importance_score(TokenSeq{1, 0, 4}) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(s.importance_score(TokenSeq{1, 3}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(s.importance_score(TokenSeq{1, 0}), NotMemberError);

  // Whenever a candidate is soccer gloves, its recorded x is 1.0 * 0.1.
  Rng rng(1);
  int seen = 0;
  for (int i = 0; i < 200; ++i) {
    const auto c = s.sample_candidate(rng);
    CHECK(is_member(idx, c.sequence));
    CHECK(c.log_importance == s.log_importance(c.sequence));
    if (c.sequence == TokenSeq{0, 2}) {
      ++seen;
      CHECK(c.importance() == doctest::Approx(0.1).epsilon(1e-15));
    }
  }
  CHECK(seen > 0);
}

TEST_CASE("constrained decoding alone favours soccer gloves") {
  const auto m = product_model();
  const auto idx = build_index(product_keywords());
  const DiscSampler s(m, idx, config(1, 5, TerminationMode::PrefixFree));
  Rng rng(2);
  const int n = 100000;
  int gloves = 0;
  for (int i = 0; i < n; ++i) gloves += s.cd_sample(rng) == TokenSeq{0, 2};
  const double p = static_cast<double>(gloves) / n;
  CHECK(std::abs(p - 0.6) < 4 * std::sqrt(0.6 * 0.4 / n));
}

TEST_CASE("a model with no mass outside S always accepts at once") {
  const auto m = product_all_valid();
  const auto idx = build_index(product_keywords());
  const DiscSampler s(m, idx, config(3, 5, TerminationMode::PrefixFree));
  Rng rng(3);
  std::map<TokenSeq, int> counts;
  for (int i = 0; i < 5000; ++i) {
    const auto o = s.disc_sample(rng);
    CHECK(o.importance() == 1.0);
    CHECK(o.rounds_used == 1);
    CHECK(o.accepted_by == AcceptedBy::Accept);
    ++counts[s.cd_sample(rng)];
  }
  const auto set = product_keywords();
  for (const auto& seq : set.sequences()) CHECK(s.importance_score(seq) == 1.0);
  // Plain constrained decoding is already exact here: P_S = {0.6, 0.04, 0.36}.
  const auto target = exact_target(m, product_keywords(), TerminationMode::PrefixFree);
  CHECK(target.at({0, 2}) == doctest::Approx(0.6));
  CHECK(cdk::testing::chi_square_p_value(
            std::map<TokenSeq, std::size_t>(counts.begin(), counts.end()), target, 5000) > 1e-3);
}

TEST_CASE("worst-case construction: importance and single-draw probability") {
  const auto [m, set] = worst_case_model(0.5, 0.1);
  const auto idx = build_index(set);
  const DiscSampler s(m, idx, config(2, 2, TerminationMode::PrefixFree));
  CHECK(s.importance_score(TokenSeq{1, 0}) == doctest::Approx(0.1));
  CHECK(s.importance_score(TokenSeq{0, 0}) == doctest::Approx(1.0));
  // P-hat = P_L / x; it sums to one over S.
  const double phat_v2v1 = sequence_probability(m, TokenSeq{1, 0}, 1.0, TerminationMode::PrefixFree) / 0.1;
  CHECK(phat_v2v1 == doctest::Approx(0.5));
  double total = 0.0;
  for (const auto& a : set.sequences()) {
    total += sequence_probability(m, a, 1.0, TerminationMode::PrefixFree) / s.importance_score(a);
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("draw counts follow the expected-steps formula") {
  const auto [m, set] = worst_case_model(0.5, 0.1);
  const auto idx = build_index(set);
  const DiscSampler s(m, idx, config(2, 2, TerminationMode::PrefixFree));
  const int n = 100000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    Rng rng(5, static_cast<std::uint64_t>(i));
    const auto o = s.disc_sample(rng);
    CHECK(o.rounds_used <= 2);
    CHECK(o.candidates_drawn == o.rounds_used + (o.accepted_by == AcceptedBy::FallbackResample ? 2 : 0));
    CHECK(o.trace.size() == o.candidates_drawn);
    const auto k = static_cast<double>(o.candidates_drawn);
    sum += k;
    sum_sq += k * k;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sum_sq / n - mean * mean) / n);
  CHECK(std::abs(mean - 1.855) < 3 * se);
}

TEST_CASE("unbounded K reproduces the target distribution") {
  const auto [m, set] = worst_case_model(0.5, 0.1);
  const auto idx = build_index(set);
  const DiscSampler s(m, idx, config(DiscConfig::kUnbounded, 2, TerminationMode::PrefixFree));
  const std::size_t n = 100000;
  std::map<TokenSeq, std::size_t> counts;
  Rng rng(6);
  for (std::size_t i = 0; i < n; ++i) {
    const auto o = s.disc_sample(rng);
    CHECK(o.accepted_by == AcceptedBy::Accept);
    ++counts[o.sequence];
  }
  const auto target = exact_target(m, set, TerminationMode::PrefixFree);
  CHECK(cdk::testing::chi_square_p_value(counts, target, n) > 1e-3);
}

TEST_CASE("constrained decoding histogram matches the exact constrained distribution") {
  const auto [m, set] = worst_case_model(0.5, 0.1);
  const auto idx = build_index(set);
  const DiscSampler s(m, idx, config(1, 2, TerminationMode::PrefixFree));
  const std::size_t n = 50000;
  std::map<TokenSeq, std::size_t> counts;
  Rng rng(7);
  for (std::size_t i = 0; i < n; ++i) ++counts[s.cd_sample(rng)];
  CHECK(cdk::testing::chi_square_p_value(counts, exact_cd(m, set, TerminationMode::PrefixFree), n) > 1e-3);
}

TEST_CASE("EOK termination reaches nested keywords") {
  const ConstraintSet set(Vocabulary(3), {{1}, {1, 2}, {0, 2}});
  const SeededRandomModel gen(4, 1.0, 3, 3, TerminationMode::Eok);
  const auto m = TabularModel::materialize(gen, set, TerminationMode::Eok);
  const auto idx = build_index(set);
  CHECK_THROWS_AS(DiscSampler(m, idx, config(2, 3, TerminationMode::PrefixFree)), DomainError);
  const DiscSampler s(m, idx, config(DiscConfig::kUnbounded, 3, TerminationMode::Eok));
  const std::size_t n = 50000;
  std::map<TokenSeq, std::size_t> counts;
  Rng rng(8);
  for (std::size_t i = 0; i < n; ++i) ++counts[s.disc_sample(rng).sequence];
  CHECK(counts.size() == 3);
  CHECK(cdk::testing::chi_square_p_value(counts, exact_target(m, set, TerminationMode::Eok), n) > 1e-3);
}

TEST_CASE("recorded importance equals the recomputed score, with and without top-M") {
  Rng setup(9);
  for (int iter = 0; iter < 40; ++iter) {
    const std::uint32_t vocab = 30;
    const auto mode = iter % 2 ? TerminationMode::Eok : TerminationMode::PrefixFree;
    const ConstraintSet set = mode == TerminationMode::Eok
                                  ? ConstraintSet(Vocabulary(vocab), cdk::testing::random_sequences(setup, vocab, 40, 5))
                                  : cdk::testing::random_prefix_free_set(setup, vocab, 40, 5);
    const auto idx = build_index(set);
    const SeededRandomModel m(setup.next(), 0.3, vocab, set.max_len() + 1, mode);
    for (const std::uint32_t M : {vocab, 10u}) {
      const DiscSampler s(m, idx, config(3, M, mode));
      Rng rng(iter, M);
      for (int i = 0; i < 50; ++i) {
        Candidate c;
        try {
          c = s.sample_candidate(rng);
        } catch (const DeadEndError&) {
          CHECK(M < vocab);  // only possible when top-M hides every valid token
          continue;
        }
        CHECK(is_member(idx, c.sequence));
        CHECK(c.log_importance <= 0.0);
        CHECK(c.log_importance == s.log_importance(c.sequence));
      }
    }
  }
}

TEST_CASE("same seed, same outcome") {
  const auto m = product_model();
  const auto idx = build_index(product_keywords());
  const DiscSampler s(m, idx, config(2, 5, TerminationMode::PrefixFree));
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng a(seed), b(seed);
    const auto x = s.disc_sample(a), y = s.disc_sample(b);
    CHECK(x.sequence == y.sequence);
    CHECK(x.log_importance == y.log_importance);
    CHECK(x.rounds_used == y.rounds_used);
    CHECK(x.accepted_by == y.accepted_by);
    REQUIRE(x.trace.size() == y.trace.size());
    for (std::size_t i = 0; i < x.trace.size(); ++i) {
      CHECK(x.trace[i].sequence == y.trace[i].sequence);
      CHECK(x.trace[i].log_importance == y.trace[i].log_importance);
    }
    CHECK(x.log_importance == s.log_importance(x.sequence));
  }
}

TEST_CASE("top-M selection") {
  const std::vector<double> p{0.1, 0.3, 0.3, 0.05, 0.25};
  CHECK(top_m_tokens(p, 1) == std::vector<TokenId>{1});
  CHECK(top_m_tokens(p, 2) == std::vector<TokenId>{1, 2});
  CHECK(top_m_tokens(p, 3) == std::vector<TokenId>{1, 2, 4});
  CHECK(top_m_tokens(std::vector<double>{0.25, 0.25, 0.25, 0.25}, 2) == std::vector<TokenId>{0, 1});
  CHECK(top_m_tokens(p, 9).size() == 5);
}

TEST_CASE("dead ends and configuration errors") {
  const auto idx = build_index(product_keywords());
  TabularModel m(5, 4);
  m.set({}, dist({0.1, 0.1, 0.8, 0, 0}));  // the most likely token continues nothing
  const DiscSampler top1(m, idx, config(1, 1, TerminationMode::PrefixFree));
  Rng rng(0);
  CHECK_THROWS_AS(top1.sample_candidate(rng), DeadEndError);

  const auto fm = product_model();
  CHECK_THROWS_AS(DiscSampler(fm, idx, config(0, 5, TerminationMode::PrefixFree)), DomainError);
  CHECK_THROWS_AS(DiscSampler(fm, idx, config(1, 0, TerminationMode::PrefixFree)), DomainError);
  CHECK_THROWS_AS(DiscSampler(fm, idx, config(1, 6, TerminationMode::PrefixFree)), DomainError);
  auto hot = config(1, 5, TerminationMode::PrefixFree);
  hot.temperature = 0.0;
  CHECK_THROWS_AS(DiscSampler(fm, idx, hot), DomainError);
  const TabularModel other(7, 4);
  CHECK_THROWS_AS(DiscSampler(other, idx, config(1, 5, TerminationMode::PrefixFree)), DomainError);
  CHECK(default_termination(idx) == TerminationMode::PrefixFree);
  CHECK(to_string(AcceptedBy::FallbackResample) == "FALLBACK_RESAMPLE");
}

TEST_CASE("importance resampling") {
  Rng rng(10);
  const std::vector<double> w{std::log(0.1), std::log(0.3), -std::numeric_limits<double>::infinity(), std::log(0.6)};
  std::vector<int> counts(4, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[resample_index(w, rng)];
  CHECK(counts[2] == 0);
  CHECK(std::abs(counts[3] / double(n) - 0.6) < 0.01);
  CHECK(std::abs(counts[0] / double(n) - 0.1) < 0.01);
  // Tiny weights do not underflow: only ratios matter.
  const std::vector<double> tiny{-2000.0, -2000.0 + std::log(3.0)};
  int second = 0;
  for (int i = 0; i < 10000; ++i) second += resample_index(tiny, rng) == 1;
  CHECK(std::abs(second / 10000.0 - 0.75) < 0.03);
  const double ninf = -std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(resample_index(std::vector<double>{ninf, ninf}, rng), FallbackDegenerateError);
  CHECK_THROWS_AS(resample_index(std::vector<double>{}, rng), FallbackDegenerateError);
  CHECK_THROWS_AS(resample_index(std::vector<double>{std::nan("")}, rng), FallbackDegenerateError);
}
