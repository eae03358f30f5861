#include "cdk/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <unordered_set>

#include "cdk/errors.hpp"
#include "cdk/oracle.hpp"
#include "cdk/rng.hpp"
#include "cdk/sampler.hpp"
#include "cdk/trie.hpp"
#include "cdk/verifier.hpp"

namespace cdk {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ns(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::nano>(b - a).count();
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size()))) - 1;
  const auto pos = v.begin() + static_cast<std::ptrdiff_t>(std::min(k, v.size() - 1));
  std::nth_element(v.begin(), pos, v.end());
  return *pos;
}

// Random reachable prefix plus M distinct candidates, the true next token
// among them.
std::vector<VerifyQuery> make_queries(const ConstraintSet& s, std::uint32_t M, std::size_t n,
                                      Rng& rng) {
  const auto& seqs = s.sequences();
  const std::uint32_t vocab = s.vocab().size();
  std::vector<VerifyQuery> out(n);
  std::unordered_set<TokenId> seen;
  for (auto& q : out) {
    const auto& kw = seqs[rng.below(seqs.size())];
    const auto len = rng.below(kw.size());
    q.prefix.assign(kw.begin(), kw.begin() + static_cast<std::ptrdiff_t>(len));
    seen.clear();
    q.candidates.push_back(kw[len]);
    seen.insert(kw[len]);
    while (q.candidates.size() < std::min(M, vocab)) {
      const auto t = static_cast<TokenId>(rng.below(vocab));
      if (seen.insert(t).second) q.candidates.push_back(t);
    }
    // Shuffle so the true token is not always first.
    for (std::size_t i = q.candidates.size(); i > 1; --i) {
      std::swap(q.candidates[i - 1], q.candidates[rng.below(i)]);
    }
  }
  return out;
}

BenchReport base_row(std::string scenario, std::string backend, std::size_t size,
                     std::uint32_t vocab, std::uint32_t M, std::size_t queries,
                     std::uint64_t seed) {
  BenchReport r;
  r.scenario = std::move(scenario);
  r.backend = std::move(backend);
  r.set_size = size;
  r.vocab_size = vocab;
  r.M = M;
  r.queries = queries;
  r.seed = seed;
  return r;
}

void mark_failed(BenchReport& r, std::string why) {
  r.scenario += "!failed";
  r.median_ns.reset();
  r.p95_ns.reset();
  r.load_ms.reset();
  r.note = std::move(why);
}

std::filesystem::path scratch(const std::filesystem::path& dir) {
  return dir.empty() ? std::filesystem::temp_directory_path() : dir;
}

}  // namespace

ConstraintSet synthetic_keywords(std::size_t n, std::uint32_t vocab_size, std::uint64_t seed) {
  Rng rng(seed);
  std::unordered_set<TokenSeq, TokenSeqHash> seen;
  seen.reserve(n);
  std::vector<TokenSeq> out;
  out.reserve(n);
  constexpr double kStop = 1.0 / 8.0;  // geometric on {1, 2, ...}, mean 8
  constexpr std::size_t kCap = 24;
  while (out.size() < n) {
    std::size_t len = 1;
    while (len < kCap && rng.uniform() >= kStop) ++len;
    TokenSeq seq(len);
    for (auto& t : seq) t = static_cast<TokenId>(rng.below(vocab_size));
    if (seen.insert(seq).second) out.push_back(std::move(seq));
  }
  return ConstraintSet(Vocabulary(vocab_size), std::move(out));
}

std::vector<BenchReport> bench_verify(const VerifySweep& sweep) {
  std::vector<BenchReport> rows;
  for (const auto size : sweep.sizes) {
    std::optional<ConstraintSet> s;
    std::optional<SortedIndex> idx;
    std::optional<Trie> trie;
    try {
      s.emplace(synthetic_keywords(size, sweep.vocab_size, sweep.seed));
      idx.emplace(build_index(*s));
      trie.emplace(Trie::build(*s));
    } catch (const std::exception& e) {
      for (const auto M : sweep.Ms) {
        for (const char* backend : {"PPV", "TRIE"}) {
          auto r = base_row("verify", backend, size, sweep.vocab_size, M, 0, sweep.seed);
          mark_failed(r, e.what());
          rows.push_back(std::move(r));
        }
      }
      continue;
    }

    for (const auto M : sweep.Ms) {
      Rng rng(sweep.seed, (static_cast<std::uint64_t>(size) << 20) ^ M);
      const auto queries = make_queries(*s, M, sweep.queries, rng);
      auto ppv = base_row("verify", "PPV", size, sweep.vocab_size, M, queries.size(), sweep.seed);
      auto tri = base_row("verify", "TRIE", size, sweep.vocab_size, M, queries.size(), sweep.seed);
      std::vector<double> ppv_ns, trie_ns;
      ppv_ns.reserve(queries.size());
      trie_ns.reserve(queries.size());
      std::uint64_t comparisons = 0;
      std::string failure;
      try {
        for (const auto& q : queries) {
          VerifyStats st;
          auto t0 = Clock::now();
          const auto a = ppv_verify_candidates(*idx, q.prefix, q.candidates, &st);
          auto t1 = Clock::now();
          const auto b = trie_verify_candidates(*trie, q.prefix, q.candidates);
          auto t2 = Clock::now();
          ppv_ns.push_back(elapsed_ns(t0, t1));
          trie_ns.push_back(elapsed_ns(t1, t2));
          comparisons += st.comparisons;
          if (a != b) {
            failure = "PPV and trie masks differ for prefix [" + to_string(q.prefix) + "]";
            break;
          }
          const auto bound = static_cast<std::uint64_t>(q.candidates.size()) *
                             comparison_bound(*idx, q.prefix.size() + 1);
          if (st.comparisons > bound) {
            failure = "comparison count above the binary-search bound";
            break;
          }
        }
      } catch (const std::exception& e) {
        failure = e.what();
      }
      ppv.repetitions = tri.repetitions = ppv_ns.size();
      if (!queries.empty()) {
        ppv.comparisons_mean =
            static_cast<double>(comparisons) / static_cast<double>(queries.size());
      }
      if (failure.empty()) {
        ppv.median_ns = quantile(ppv_ns, 0.5);
        ppv.p95_ns = quantile(ppv_ns, 0.95);
        tri.median_ns = quantile(trie_ns, 0.5);
        tri.p95_ns = quantile(trie_ns, 0.95);
      } else {
        mark_failed(ppv, failure);
        mark_failed(tri, failure);
      }
      rows.push_back(std::move(ppv));
      rows.push_back(std::move(tri));

      if (sweep.batch_workers > 0 && failure.empty()) {
        auto batch = base_row("verify_batch", "PPV", size, sweep.vocab_size, M, queries.size(),
                              sweep.seed);
        auto t0 = Clock::now();
        const auto masks = ppv_verify_batch(*idx, queries, sweep.batch_workers);
        auto t1 = Clock::now();
        batch.median_ns = elapsed_ns(t0, t1) / static_cast<double>(std::max<std::size_t>(1, queries.size()));
        batch.repetitions = 1;
        for (std::size_t i = 0; i < queries.size(); ++i) {
          if (masks[i] != trie_verify(*trie, queries[i].prefix, queries[i].candidates)) {
            mark_failed(batch, "batched PPV mask differs from trie");
            break;
          }
        }
        rows.push_back(std::move(batch));
      }
    }
  }
  return rows;
}

std::vector<BenchReport> bench_load(const LoadSweep& sweep) {
  std::vector<BenchReport> rows;
  const auto dir = scratch(sweep.scratch_dir);
  const auto reps = std::max<std::size_t>(1, sweep.repetitions);
  for (const auto size : sweep.sizes) {
    auto bin = base_row("load", "BINARY", size, sweep.vocab_size, 0, 0, sweep.seed);
    auto txt = base_row("load", "TRIE_JSON", size, sweep.vocab_size, 0, 0, sweep.seed);
    const auto tag = std::to_string(size) + "_" + std::to_string(sweep.seed);
    const auto idx_path = dir / ("cdk_bench_" + tag + ".idx");
    const auto trie_path = dir / ("cdk_bench_" + tag + ".trie.json");
    try {
      {
        const auto s = synthetic_keywords(size, sweep.vocab_size, sweep.seed);
        save_index(build_index(s), idx_path);
        save_trie_json(Trie::build(s), trie_path);
      }
      std::vector<double> bin_ms, txt_ms;
      std::optional<SortedIndex> idx;
      std::optional<Trie> trie;
      for (std::size_t r = 0; r < reps; ++r) {
        auto t0 = Clock::now();
        idx.emplace(load_index(idx_path));
        auto t1 = Clock::now();
        bin_ms.push_back(elapsed_ns(t0, t1) / 1e6);
      }
      for (std::size_t r = 0; r < reps; ++r) {
        trie.reset();
        auto t0 = Clock::now();
        trie.emplace(load_trie_json(trie_path));
        auto t1 = Clock::now();
        txt_ms.push_back(elapsed_ns(t0, t1) / 1e6);
      }
      bin.repetitions = txt.repetitions = reps;
      bin.load_ms = quantile(bin_ms, 0.5);
      txt.load_ms = quantile(txt_ms, 0.5);

      // Round-trip check: both loaded structures answer identically.
      Rng rng(sweep.seed, size);
      const auto queries = make_queries(idx->constraint_set(), 50, 200, rng);
      for (const auto& q : queries) {
        if (ppv_verify_candidates(*idx, q.prefix, q.candidates) !=
            trie_verify_candidates(*trie, q.prefix, q.candidates)) {
          mark_failed(bin, "loaded index and trie disagree");
          mark_failed(txt, "loaded index and trie disagree");
          break;
        }
      }
    } catch (const std::exception& e) {
      mark_failed(bin, e.what());
      mark_failed(txt, e.what());
    }
    std::error_code ec;
    std::filesystem::remove(idx_path, ec);
    std::filesystem::remove(trie_path, ec);
    rows.push_back(std::move(bin));
    rows.push_back(std::move(txt));
  }
  return rows;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchReport>& rows,
                     bool include_timing) {
  out << "scenario,backend,set_size,M,queries,median_ns,p95_ns,load_ms,comparisons_mean,seed\n";
  auto num = [&](const std::optional<double>& v, bool timing) {
    if (!v || (timing && !include_timing)) return std::string();
    char buf[40];
    std::snprintf(buf, sizeof buf, timing ? "%.1f" : "%.3f", *v);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    out << r.scenario << ',' << r.backend << ',' << r.set_size << ',' << r.M << ','
        << r.queries << ',' << num(r.median_ns, true) << ',' << num(r.p95_ns, true) << ','
        << num(r.load_ms, true) << ',' << num(r.comparisons_mean, false) << ',' << r.seed
        << '\n';
  }
}

std::vector<QualityRow> quality_sweep(const TabularModel& m, const ConstraintSet& s,
                                      const std::vector<std::uint64_t>& Ks,
                                      const std::vector<std::uint32_t>& Ms, std::size_t n,
                                      std::uint64_t seed, TerminationMode mode) {
  const auto target = exact_target(m, s, mode);
  const auto idx = build_index(s);
  std::vector<QualityRow> rows;
  for (const auto K : Ks) {
    for (const auto M_req : Ms) {
      DiscConfig cfg;
      cfg.K = K;
      cfg.M = std::min(M_req, m.vocab_size());
      cfg.termination = mode;
      cfg.seed = seed;
      const DiscSampler sampler(m, idx, cfg);
      std::map<TokenSeq, std::size_t> counts;
      std::uint64_t candidates = 0, rounds = 0;
      for (std::size_t i = 0; i < n; ++i) {
        Rng rng(seed, i);
        auto o = sampler.disc_sample(rng);
        candidates += o.candidates_drawn;
        rounds += o.rounds_used;
        ++counts[o.sequence];
      }
      QualityRow row;
      row.K = K;
      row.M = cfg.M;
      const double dn = static_cast<double>(std::max<std::size_t>(n, 1));
      double tv = 0.0;
      for (const auto& [seq, p] : target.probs) {
        auto it = counts.find(seq);
        tv += std::abs((it == counts.end() ? 0.0 : static_cast<double>(it->second) / dn) - p);
      }
      for (const auto& [seq, c] : counts) {
        if (!target.probs.contains(seq)) tv += static_cast<double>(c) / dn;
      }
      row.tv = 0.5 * tv;
      row.mean_candidates = static_cast<double>(candidates) / dn;
      row.mean_rounds = static_cast<double>(rounds) / dn;
      rows.push_back(row);
    }
  }
  return rows;
}

void write_quality_csv(std::ostream& out, const std::vector<QualityRow>& rows) {
  out << "K,M,tv,mean_candidates,mean_rounds\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%llu,%u,%.6f,%.6f,%.6f\n",
                  static_cast<unsigned long long>(r.K), r.M, r.tv, r.mean_candidates,
                  r.mean_rounds);
    out << buf;
  }
}

}  // namespace cdk
