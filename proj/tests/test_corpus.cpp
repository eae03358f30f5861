#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <set>
#include <sstream>

#include "cdk/corpus.hpp"
#include "cdk/errors.hpp"
#include "cdk/rng.hpp"
#include "test_support.hpp"

using namespace cdk;
using cdk::testing::product_keywords;

namespace {

std::vector<unsigned char> to_bytes(const SortedIndex& idx) {
  std::ostringstream os;
  write_index(idx, os);
  const auto s = os.str();
  return {s.begin(), s.end()};
}

void reseal(std::vector<unsigned char>& bytes) {
  const auto sum = fnv1a64(std::span(bytes).first(bytes.size() - 8));
  for (int i = 0; i < 8; ++i) bytes[bytes.size() - 8 + i] = static_cast<unsigned char>(sum >> (8 * i));
}

std::vector<TokenSeq> rows_of(const SortedIndex& idx) {
  std::vector<TokenSeq> out;
  for (const auto& b : idx.buckets) {
    for (std::size_t i = 0; i < b.count(); ++i) {
      const auto k = b.keyword(i);
      out.emplace_back(k.begin(), k.end());
    }
  }
  return out;
}

}  // namespace

TEST_CASE("single bucket pads with a sentinel that sorts first") {
  const ConstraintSet s(Vocabulary(4), {{2}, {1, 2}, {1}});
  const auto idx = build_index(s, BucketPolicy::Single);
  REQUIRE(idx.buckets.size() == 1);
  const auto& b = idx.buckets[0];
  CHECK(b.width == 2);
  CHECK(b.true_lengths == std::vector<std::uint32_t>{1, 2, 1});
  CHECK(b.cells == std::vector<std::uint32_t>{1, kPad, 1, 2, 2, kPad});
  CHECK_FALSE(idx.prefix_free);
}

TEST_CASE("singleton set") {
  const auto idx = build_index(ConstraintSet(Vocabulary(5), {{3, 4}}));
  CHECK(idx.buckets.size() == 1);
  CHECK(idx.total_count() == 1);
  CHECK(idx.prefix_free);
}

TEST_CASE("product example rows and buckets") {
  const auto idx = build_index(product_keywords());
  CHECK(idx.prefix_free);
  // Lengths 2 and 3 share the [2, 3] bucket, so rows follow plain lex order.
  CHECK(rows_of(idx) == std::vector<TokenSeq>{{0, 2}, {1, 0, 4}, {1, 3}});
  CHECK(idx.sequences() == std::vector<TokenSeq>{{0, 2}, {1, 0, 4}, {1, 3}});
  REQUIRE(idx.buckets.size() == 1);  // lengths 2 and 3 share [2, 3]
  CHECK(idx.buckets[0].width == 3);
}

TEST_CASE("power-of-two buckets") {
  CHECK(pow2_bucket_of(1) == 0);
  CHECK(pow2_bucket_of(2) == 1);
  CHECK(pow2_bucket_of(3) == 1);
  CHECK(pow2_bucket_of(4) == 2);
  CHECK(pow2_bucket_of(7) == 2);
  CHECK(pow2_bucket_of(8) == 3);
  const ConstraintSet s(Vocabulary(3), {{0}, {0, 1}, {0, 1, 2}, {0, 1, 2, 0, 1}, {2, 2, 2, 2, 2, 2, 2, 2}});
  const auto idx = build_index(s);
  REQUIRE(idx.buckets.size() == 4);
  CHECK(idx.buckets[0].max_len == 1);
  CHECK(idx.buckets[1].min_len == 2);
  CHECK(idx.buckets[1].max_len == 3);
  CHECK(idx.buckets[2].width == 5);
  CHECK(idx.buckets[3].width == 8);
  CHECK(idx.max_len() == 8);
}

TEST_CASE("constraint set validation") {
  CHECK_THROWS_AS(ConstraintSet(Vocabulary(3), {{0, 3}}), TokenOutOfRangeError);
  CHECK_THROWS_AS(ConstraintSet(Vocabulary(3), {{}}), DomainError);
  const ConstraintSet dup(Vocabulary(3), {{1, 2}, {1, 2}, {0}});
  CHECK(dup.size() == 2);
  CHECK_THROWS_AS(build_index(ConstraintSet(Vocabulary(3), {})), EmptySetError);
}

TEST_CASE("check_prefix_free") {
  CHECK(check_prefix_free(ConstraintSet(Vocabulary(3), {{1, 2}, {2, 1}})));
  CHECK_FALSE(check_prefix_free(ConstraintSet(Vocabulary(3), {{1}, {1, 2}})));
  CHECK(check_prefix_free(ConstraintSet(Vocabulary(2), {{0, 0}, {0, 1}, {1, 0}})));
  CHECK_FALSE(check_prefix_free(ConstraintSet(Vocabulary(3), {{0, 1}, {0, 1, 2}, {0, 2}})));
}

TEST_CASE("keyword file reader") {
  std::istringstream ok("0 2\n\n1 3\n1 0 4\n");
  CHECK(read_keywords(ok, Vocabulary(5)).sequences() == product_keywords().sequences());

  std::istringstream bad_token("0 2\n1 7\n");
  try {
    read_keywords(bad_token, Vocabulary(5));
    FAIL("expected TokenOutOfRangeError");
  } catch (const TokenOutOfRangeError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  std::istringstream bad_text("0 2\n1 x\n");
  CHECK_THROWS_AS(read_keywords(bad_text, Vocabulary(5)), ParseError);

  std::ostringstream os;
  write_keywords(os, product_keywords());
  std::istringstream back(os.str());
  CHECK(read_keywords(back, Vocabulary(5)).sequences() == product_keywords().sequences());
}

TEST_CASE("index save and load") {
  const auto idx = build_index(product_keywords());
  const auto path = cdk::testing::temp_path("product.idx");
  save_index(idx, path);
  CHECK(load_index(path) == idx);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_index(path), IoError);
}

TEST_CASE("damaged index files are rejected") {
  const auto idx = build_index(ConstraintSet(Vocabulary(4), {{2}, {1, 2}, {1}}), BucketPolicy::Single);
  const auto good = to_bytes(idx);
  CHECK(read_index(good) == idx);

  SUBCASE("wrong magic") {
    auto b = good;
    b[0] = 'X';
    CHECK_THROWS_AS(read_index(b), FormatError);
  }
  SUBCASE("checksum mismatch") {
    auto b = good;
    b[30] ^= 1;
    CHECK_THROWS_AS(read_index(b), FormatError);
  }
  SUBCASE("wrong version") {
    auto b = good;
    b[8] = 2;
    reseal(b);
    CHECK_THROWS_AS(read_index(b), FormatError);
  }
  SUBCASE("truncated") {
    auto b = good;
    b.erase(b.begin() + 40, b.begin() + 44);
    CHECK_THROWS_AS(read_index(b), FormatError);
    CHECK_THROWS_AS(read_index(std::span(good).first(10)), FormatError);
  }
  SUBCASE("rows swapped out of order") {
    // header 20 bytes, bucket header 16, 3 true lengths, then 3 rows of 2 cells.
    auto b = good;
    const std::size_t cells = 20 + 16 + 12;
    std::swap_ranges(b.begin() + cells, b.begin() + cells + 8, b.begin() + cells + 16);
    auto unsealed = b;
    CHECK_THROWS_AS(read_index(unsealed), FormatError);
    reseal(b);
    CHECK_THROWS_AS(read_index(b), CorruptionError);
  }
  SUBCASE("token past its true length") {
    auto b = good;
    const std::size_t cells = 20 + 16 + 12;
    b[cells + 4] = 0;  // row 0 is [1, PAD]; overwrite the pad
    b[cells + 5] = b[cells + 6] = b[cells + 7] = 0;
    reseal(b);
    CHECK_THROWS_AS(read_index(b), CorruptionError);
  }
}

TEST_CASE("random sets: rows reproduce the set and every bucket is sorted") {
  Rng rng(2024);
  for (int iter = 0; iter < 1000; ++iter) {
    const auto vocab = static_cast<std::uint32_t>(1 + rng.below(64));
    const auto seqs = cdk::testing::random_sequences(rng, vocab, 1 + rng.below(512), 12);
    const ConstraintSet s(Vocabulary(vocab), seqs);
    const std::set<TokenSeq> expected(seqs.begin(), seqs.end());
    bool nested = false;
    for (const auto& a : expected) {
      for (const auto& b : expected) nested = nested || (a != b && is_prefix(a, b));
    }
    for (const auto policy : {BucketPolicy::Pow2, BucketPolicy::Single}) {
      const auto idx = build_index(s, policy);
      const auto rows = rows_of(idx);
      CHECK(rows.size() == expected.size());
      CHECK(std::set<TokenSeq>(rows.begin(), rows.end()) == expected);
      CHECK(idx.prefix_free == !nested);
      for (const auto& b : idx.buckets) {
        for (std::size_t i = 0; i < b.count(); ++i) {
          CHECK(b.min_len <= b.true_lengths[i]);
          CHECK(b.true_lengths[i] <= b.max_len);
          CHECK(b.max_len <= b.width);
          const auto row = b.row(i);
          for (std::size_t c = 0; c < b.width; ++c) CHECK((row[c] == kPad) == (c >= b.true_lengths[i]));
          if (i > 0) CHECK(std::lexicographical_compare(
              b.row(i - 1).begin(), b.row(i - 1).end(), row.begin(), row.end(),
              [](auto x, auto y) { return cell_key(x) < cell_key(y); }));
        }
      }
      const auto loaded = read_index(to_bytes(idx));
      CHECK(loaded == idx);
      CHECK(loaded.prefix_free == !nested);
    }
  }
}
