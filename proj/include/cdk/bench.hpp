#pragma once

// PPV vs trie measurements on synthetic keyword sets: single-query
// verification latency, load time of the two on-disk forms, and a DISC
// quality sweep over K and M against the exact oracle.
//
// Timing numbers are machine-dependent and only reported. Everything else in
// a report (queries, comparison counts, quality figures) is a function of the
// seed.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cdk/corpus.hpp"
#include "cdk/model.hpp"

namespace cdk {

inline constexpr std::uint32_t kBenchVocab = 50264;

// n distinct keywords, lengths geometric with mean 8 capped at 24, tokens
// uniform over the vocabulary.
ConstraintSet synthetic_keywords(std::size_t n, std::uint32_t vocab_size, std::uint64_t seed);

struct BenchReport {
  std::string scenario;  // "verify", "verify_batch", "load"; "!failed" suffix on failure
  std::string backend;   // "PPV", "TRIE", "BINARY", "TRIE_JSON"
  std::size_t set_size = 0;
  std::uint32_t vocab_size = 0;
  std::uint32_t M = 0;
  std::size_t queries = 0;
  std::optional<double> median_ns;
  std::optional<double> p95_ns;
  std::optional<double> load_ms;
  std::optional<double> comparisons_mean;
  std::size_t repetitions = 0;
  std::uint64_t seed = 0;
  std::string note;  // failure reason
};

struct VerifySweep {
  std::vector<std::size_t> sizes{1000, 10000, 100000, 1000000};
  std::vector<std::uint32_t> Ms{50, 100, 500, 1000};
  std::size_t queries = 10000;
  std::uint32_t vocab_size = kBenchVocab;
  std::uint64_t seed = 0;
  unsigned batch_workers = 0;  // > 0 adds a batched-throughput row per (size, M)
};

// Rows per (size, M) for PPV and TRIE on identical queries. Masks from the
// two backends are compared for every query, and PPV comparison counts are
// checked against the binary-search bound; a scenario failing either check
// is reported without timings.
std::vector<BenchReport> bench_verify(const VerifySweep& sweep);

struct LoadSweep {
  std::vector<std::size_t> sizes{1000, 10000, 100000, 1000000};
  std::uint32_t vocab_size = kBenchVocab;
  std::uint64_t seed = 0;
  std::size_t repetitions = 3;
  std::filesystem::path scratch_dir;  // empty: system temp directory
};

// Binary index load vs trie JSON load on the same keyword set.
std::vector<BenchReport> bench_load(const LoadSweep& sweep);

// header: scenario,backend,set_size,M,queries,median_ns,p95_ns,load_ms,comparisons_mean,seed
// With include_timing = false the three timing columns are left empty.
void write_bench_csv(std::ostream& out, const std::vector<BenchReport>& rows,
                     bool include_timing = true);

struct QualityRow {
  std::uint64_t K = 0;
  std::uint32_t M = 0;
  double tv = 0.0;               // empirical total variation to exact_target
  double mean_candidates = 0.0;  // acceptance plus fallback draws per sample
  double mean_rounds = 0.0;      // acceptance-phase draws per sample
};

// DISC with each (K, M) pair, n draws each, compared against the exact
// target. M values above the vocabulary are clamped. Throws
// EnumerationBudgetExceeded from the oracle.
std::vector<QualityRow> quality_sweep(const TabularModel& m, const ConstraintSet& s,
                                      const std::vector<std::uint64_t>& Ks,
                                      const std::vector<std::uint32_t>& Ms, std::size_t n,
                                      std::uint64_t seed, TerminationMode mode);

// header: K,M,tv,mean_candidates,mean_rounds
void write_quality_csv(std::ostream& out, const std::vector<QualityRow>& rows);

}  // namespace cdk
