#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "cdk/errors.hpp"
#include "cdk/oracle.hpp"
#include "cdk/sampler.hpp"
#include "test_support.hpp"

using namespace cdk;
using cdk::testing::dist;
using cdk::testing::product_keywords;
using cdk::testing::product_model;

namespace {

constexpr auto kPF = TerminationMode::PrefixFree;

ExactDistribution from(std::initializer_list<std::pair<const TokenSeq, double>> v) { return {std::map<TokenSeq, double>(v)}; }

// P_L(a) by multiplying table entries directly, without the model helpers.
double path_product(const TabularModel& m, const TokenSeq& a, TerminationMode mode) {
  double p = 1.0;
  TokenSeq prefix;
  for (const auto t : a) {
    p *= m.next_distribution(prefix, 1.0).probs[t];
    prefix.push_back(t);
  }
  if (mode == TerminationMode::Eok) p *= m.next_distribution(prefix, 1.0).eok;
  return p;
}

}  // namespace

TEST_CASE("mass outside S") {
  const auto [wm, ws] = worst_case_model(0.5, 0.1);
  CHECK(p_bad(wm, ws, kPF) == doctest::Approx(0.45).epsilon(1e-14));
  CHECK(p_bad(wm, ws, TerminationMode::Eok) == doctest::Approx(0.45).epsilon(1e-14));
  CHECK(p_bad(product_model(), product_keywords(), kPF) == doctest::Approx(0.576).epsilon(1e-14));
  // S = every length-2 sequence.
  const ConstraintSet all(Vocabulary(2), {{0, 0}, {0, 1}, {1, 0}, {1, 1}});
  CHECK(std::abs(p_bad(wm, all, kPF)) < 1e-15);
}

TEST_CASE("target distribution") {
  const auto [m, s] = worst_case_model(0.5, 0.1);
  const auto t = exact_target(m, s, kPF);
  CHECK(t.at({0, 0}) == doctest::Approx(0.25 / 0.55).epsilon(1e-14));
  CHECK(t.at({0, 1}) == doctest::Approx(0.25 / 0.55).epsilon(1e-14));
  CHECK(t.at({1, 0}) == doctest::Approx(0.05 / 0.55).epsilon(1e-14));
  CHECK_NOTHROW(t.validate());

  TabularModel uniform(3, 3);
  uniform.set({}, dist({1.0 / 3, 1.0 / 3, 1.0 / 3}));
  uniform.set({2}, dist({1.0 / 3, 1.0 / 3, 1.0 / 3}));
  const auto point = exact_target(uniform, ConstraintSet(Vocabulary(3), {{2, 1}}), kPF);
  CHECK(point.probs.size() == 1);
  CHECK(point.at({2, 1}) == 1.0);

  TabularModel dead(2, 3);
  dead.set({}, dist({1.0, 0.0}));
  CHECK_THROWS_AS(exact_target(dead, ConstraintSet(Vocabulary(2), {{1}}), kPF), DegenerateError);
}

TEST_CASE("target agrees with direct path products on random instances") {
  Rng rng(1);
  for (int iter = 0; iter < 200; ++iter) {
    const auto inst = cdk::testing::random_instance(rng, 12);
    const auto t = exact_target(inst.model, inst.set, inst.mode);
    double z = 0.0;
    for (const auto& a : inst.set.sequences()) z += path_product(inst.model, a, inst.mode);
    for (const auto& a : inst.set.sequences()) {
      CHECK(t.at(a) == doctest::Approx(path_product(inst.model, a, inst.mode) / z).epsilon(1e-12));
    }
  }
}

TEST_CASE("constrained-decoding distribution") {
  for (const double pb : {0.1, 0.5, 0.9}) {
    for (const double eps : {0.01, 0.3, 0.9}) {
      const auto [m, s] = worst_case_model(pb, eps);
      const auto cd = exact_cd(m, s, oracle_mode(s));
      CHECK(cd.at({0, 0}) == doctest::Approx((1 - pb) / 2).epsilon(1e-14));
      CHECK(cd.at({0, 1}) == doctest::Approx((1 - pb) / 2).epsilon(1e-14));
      CHECK(cd.at({1, 0}) == doctest::Approx(pb).epsilon(1e-14));
    }
  }
  CHECK(exact_cd(product_model(), product_keywords(), kPF).at({0, 2}) == doctest::Approx(0.6).epsilon(1e-14));
  const ConstraintSet nested(Vocabulary(2), {{0}, {0, 1}});
  CHECK_THROWS_AS(exact_cd(product_model(), nested, kPF), DomainError);
}

TEST_CASE("importance normalization identity: sum of P_L / x over S is one") {
  Rng rng(2);
  for (int iter = 0; iter < 200; ++iter) {
    const auto inst = cdk::testing::random_instance(rng, 32, 0.999);
    const auto x = exact_importance(inst.model, inst.set, inst.mode);
    const auto cd = exact_cd(inst.model, inst.set, inst.mode);
    double total = 0.0;
    for (const auto& a : inst.set.sequences()) {
      const double pl = sequence_probability(inst.model, a, 1.0, inst.mode);
      total += pl / x.at(a);
      CHECK(cd.at(a) == doctest::Approx(pl / x.at(a)).epsilon(1e-12));
    }
    CHECK(std::abs(total - 1.0) <= 1e-9);
  }
}

TEST_CASE("exact DISC distribution") {
  Rng rng(3);
  for (int iter = 0; iter < 60; ++iter) {
    const auto inst = cdk::testing::random_instance(rng, 8);
    const auto& [m, s, mode, pb] = inst;
    const auto target = exact_target(m, s, mode);
    const auto cd = exact_cd(m, s, mode);
    // K = 1: resampling one draw returns it.
    const auto one = exact_disc(m, s, 1, mode);
    for (const auto& a : s.sequences()) {
      CHECK(one.at(a) == doctest::Approx(pb * cd.at(a) + (1 - pb) * target.at(a)).epsilon(1e-12));
    }
    for (const std::size_t K : {1, 2, 3, 4}) {
      const auto q = exact_resample(m, s, K, mode);
      const auto direct = exact_resample_direct(m, s, K, mode);
      CHECK(std::abs(q.total() - 1.0) < 1e-9);
      for (const auto& a : s.sequences()) CHECK(q.at(a) == doctest::Approx(direct.at(a)).epsilon(1e-12));
      const auto d = exact_disc(m, s, K, mode);
      CHECK_NOTHROW(d.validate());
      CHECK(kl(target, d).value <= disc_kl_bound(std::max(pb, 0.0), K) + 1e-12);
    }
    const double kl1 = kl(target, exact_disc(m, s, 1, mode)).value;
    const double kl6 = kl(target, exact_disc(m, s, 6, mode)).value;
    CHECK(kl6 <= kl1 + 1e-15);
    if (kl1 > 1e-9) CHECK(kl6 < kl1);
  }

  const auto all_valid = [] {
    auto m = product_model();
    m.set({0}, dist({0, 0, 1, 0, 0}));
    m.set({1, 0}, dist({0, 0, 0, 0, 1}));
    m.set({1}, dist({0.9, 0, 0, 0.1, 0}));
    return m;
  }();
  const auto t = exact_target(all_valid, product_keywords(), kPF);
  for (const std::size_t K : {1, 3}) {
    const auto d = exact_disc(all_valid, product_keywords(), K, kPF);
    for (const auto& [a, p] : t.probs) CHECK(d.at(a) == doctest::Approx(p).epsilon(1e-14));
  }
}

TEST_CASE("exact DISC at K = 2 matches sampling on the worst-case construction") {
  const auto [m, s] = worst_case_model(0.5, 0.1);
  const auto idx = build_index(s);
  DiscConfig cfg;
  cfg.K = 2;
  cfg.M = 2;
  cfg.termination = kPF;
  const DiscSampler sampler(m, idx, cfg);
  const std::size_t n = 200000;
  std::map<TokenSeq, std::size_t> counts;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(44, i);
    ++counts[sampler.disc_sample(rng).sequence];
  }
  CHECK(cdk::testing::chi_square_p_value(counts, exact_disc(m, s, 2, kPF), n) > 1e-3);
}

TEST_CASE("KL divergence") {
  const auto p = from({{{0}, 0.5}, {{1}, 0.5}});
  const auto q = from({{{0}, 0.9}, {{1}, 0.1}});
  CHECK(kl(p, p).value == 0.0);
  CHECK(kl(p, q).value == doctest::Approx(0.5 * std::log(5.0 / 9.0) + 0.5 * std::log(5.0)).epsilon(1e-14));
  CHECK(kl(p, q).value == doctest::Approx(0.510826).epsilon(1e-6));
  const auto r = kl(p, from({{{0}, 1.0}}));
  CHECK(r.support_mismatch);
  CHECK(std::isinf(r.value));
  // Zero entries of p contribute nothing.
  CHECK(kl(from({{{0}, 1.0}, {{1}, 0.0}}), from({{{0}, 1.0}})).value == 0.0);
}

TEST_CASE("worst-case closed form agrees with the generic KL") {
  const auto [m, s] = worst_case_model(0.5, 0.1);
  const double generic = kl(exact_target(m, s, kPF), exact_cd(m, s, kPF)).value;
  CHECK(std::abs(generic - worst_case_kl(0.5, 0.1)) < 1e-9);
  CHECK(worst_case_kl(0.5, 0.1) == doctest::Approx(0.38851).epsilon(1e-5));
  CHECK(std::abs(worst_case_kl(0.5, 1.0 - 1e-12)) < 1e-9);

  // Lower-bound behaviour with a single constant across p_b.
  double c = std::numeric_limits<double>::infinity();
  for (const double pb : {0.3, 0.6, 0.9}) {
    const auto [wm, ws] = worst_case_model(pb, 1e-6);
    const double v = kl(exact_target(wm, ws, kPF), exact_cd(wm, ws, kPF)).value;
    CHECK(v == doctest::Approx(worst_case_kl(pb, 1e-6)).epsilon(1e-9));
    c = std::min(c, v / std::log(1.0 / (1.0 - pb)));
  }
  CHECK(c > 0.5);
  CHECK_THROWS_AS(worst_case_kl(0.0, 0.1), DomainError);
  CHECK_THROWS_AS(worst_case_kl(0.5, 0.0), DomainError);
}

TEST_CASE("closed-form bound and expected steps") {
  CHECK(disc_kl_bound(0.0, 3) == 0.0);
  CHECK(disc_kl_bound(0.45, 2) == doctest::Approx(0.2025 * (std::sqrt(0.45 / 1.1) + 0.45 / 2.2)).epsilon(1e-14));
  CHECK(disc_kl_bound(0.45, 2) == doctest::Approx(0.170939).epsilon(1e-5));
  for (double pb = 0.05; pb < 0.99; pb += 0.05) {
    for (std::size_t K = 1; K < 16; ++K) CHECK(disc_kl_bound(pb, K + 1) < disc_kl_bound(pb, K));
  }
  CHECK_THROWS_AS(disc_kl_bound(1.0, 1), DomainError);
  CHECK_THROWS_AS(disc_kl_bound(0.5, 0), DomainError);

  CHECK(expected_steps(0.0, 5) == 1.0);
  CHECK(expected_steps(0.45, 2) == doctest::Approx(1.855).epsilon(1e-14));
  for (int i = 0; i <= 99; ++i) {
    const double pb = i / 100.0;
    for (std::size_t K = 1; K <= 64; ++K) CHECK(expected_steps(pb, K) <= expected_steps_ceiling(pb));
  }
  CHECK_THROWS_AS(expected_steps(-0.1, 1), DomainError);
  CHECK_THROWS_AS(expected_steps_ceiling(1.0), DomainError);
}

TEST_CASE("mixing towards P never increases KL faster than linearly") {
  const auto p = from({{{0}, 0.2}, {{1}, 0.8}});
  const auto q = from({{{0}, 0.7}, {{1}, 0.3}});
  const auto [l1, r1] = mixture_kl_gap(p, q, 1.0);
  CHECK(l1 == 0.0);
  CHECK(r1 == 0.0);
  const auto [l0, r0] = mixture_kl_gap(p, q, 0.0);
  CHECK(l0 == doctest::Approx(r0).epsilon(1e-15));
  CHECK(l0 == doctest::Approx(kl(p, q).value));
  CHECK_THROWS_AS(mixture_kl_gap(p, from({{{0}, 1.0}}), 0.5), SupportMismatchError);
  CHECK_THROWS_AS(mixture_kl_gap(p, q, 1.5), DomainError);

  Rng rng(5);
  for (int iter = 0; iter < 10000; ++iter) {
    const auto n = 1 + rng.below(16);
    ExactDistribution a, b;
    double za = 0, zb = 0;
    for (TokenId i = 0; i < n; ++i) {
      a.probs[{i}] = rng.below(4) ? rng.uniform() : 0.0;
      b.probs[{i}] = 1e-3 + rng.uniform();
      za += a.probs[{i}];
      zb += b.probs[{i}];
    }
    if (za == 0) continue;
    for (auto& [k, v] : a.probs) v /= za;
    for (auto& [k, v] : b.probs) v /= zb;
    const auto [lhs, rhs] = mixture_kl_gap(a, b, rng.uniform());
    CHECK(lhs <= rhs + 1e-12);
  }
}

TEST_CASE("enumeration budget") {
  Rng rng(6);
  std::vector<TokenSeq> seqs;
  for (TokenId a = 0; a < 9; ++a) {
    for (TokenId b = 0; b < 8; ++b) seqs.push_back({a, b});
  }
  const ConstraintSet big(Vocabulary(9), seqs);  // 72 keywords
  const SeededRandomModel gen(1, 1.0, 9, 3, kPF);
  const auto m = TabularModel::materialize(gen, big, kPF);
  CHECK_THROWS_AS(p_bad(m, big, kPF), EnumerationBudgetExceeded);
  CHECK_THROWS_AS(exact_target(m, big, kPF), EnumerationBudgetExceeded);
  CHECK_THROWS_AS(exact_disc(m, big, 2, kPF), EnumerationBudgetExceeded);

  const ConstraintSet mid(Vocabulary(9), std::vector<TokenSeq>(seqs.begin(), seqs.begin() + 60));
  CHECK_NOTHROW(exact_disc(m, mid, 3, kPF));  // 60^2 tuples
  CHECK_THROWS_AS(exact_disc(m, mid, 5, kPF), EnumerationBudgetExceeded);  // 60^4
  EnumerationBudget loose;
  loose.max_set_size = 100;
  CHECK_NOTHROW(p_bad(m, big, kPF, loose));
  CHECK_THROWS_AS(exact_resample(m, mid, 0, kPF), DomainError);
}

TEST_CASE("distribution export") {
  std::ostringstream os;
  write_distribution(os, from({{{0, 2}, 0.1}, {{1}, 0.9}}));
  CHECK(os.str() == "0 2\t0.10000000000000001\n1\t0.90000000000000002\n");
  CHECK(oracle_mode(product_keywords()) == kPF);
  CHECK(oracle_mode(ConstraintSet(Vocabulary(2), {{0}, {0, 1}})) == TerminationMode::Eok);
}
