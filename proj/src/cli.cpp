#include "cdk/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cdk/bench.hpp"
#include "cdk/errors.hpp"
#include "cdk/external_model.hpp"
#include "cdk/model.hpp"
#include "cdk/oracle.hpp"
#include "cdk/sampler.hpp"
#include "cdk/trie.hpp"
#include "cdk/verifier.hpp"

namespace cdk {

namespace {

std::string fmt(double v, const char* spec = "%.17g") {
  char buf[48];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::uint64_t parse_K(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "inf" || t == "infinite" || t == "unbounded") return DiscConfig::kUnbounded;
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(t, &pos);
  } catch (const std::exception&) {
    throw DomainError("K must be a positive integer or 'inf', got '" + text + "'");
  }
  if (pos != t.size() || v < 1) {
    throw DomainError("K must be a positive integer or 'inf', got '" + text + "'");
  }
  return static_cast<std::uint64_t>(v);
}

BucketPolicy parse_policy(const std::string& text) {
  if (text == "pow2") return BucketPolicy::Pow2;
  if (text == "single") return BucketPolicy::Single;
  throw DomainError("bucket policy must be pow2 or single, got '" + text + "'");
}

TerminationMode resolve_mode(const std::string& text, const SortedIndex& idx) {
  if (text == "auto") return default_termination(idx);
  return parse_termination(text);
}

std::string strip_prefix(const std::string& text, const std::string& prefix) {
  return text.rfind(prefix, 0) == 0 ? text.substr(prefix.size()) : text;
}

struct ModelOptions {
  std::string selector;
  double concentration = 1.0;
  double timeout_s = 30.0;
};

// tabular:<path> | seeded:<seed> | external:<stdio:cmd | tcp:host:port>
std::unique_ptr<ModelInterface> open_model(const ModelOptions& o, const SortedIndex& idx,
                                           TerminationMode mode) {
  const auto& sel = o.selector;
  const auto colon = sel.find(':');
  const std::string kind = colon == std::string::npos ? std::string() : sel.substr(0, colon);
  const std::string rest = colon == std::string::npos ? sel : sel.substr(colon + 1);
  // Room for every keyword plus its EOK step.
  const std::size_t max_len = idx.max_len() + 1;
  if (kind == "tabular") {
    auto m = std::make_unique<TabularModel>(TabularModel::load(rest));
    if (m->vocab_size() != idx.vocab_size) {
      throw DomainError("model vocabulary " + std::to_string(m->vocab_size()) +
                        " differs from index vocabulary " + std::to_string(idx.vocab_size));
    }
    return m;
  }
  if (kind == "seeded") {
    std::uint64_t seed = 0;
    try {
      seed = std::stoull(rest);
    } catch (const std::exception&) {
      throw DomainError("seeded model needs an integer seed, got '" + rest + "'");
    }
    return std::make_unique<SeededRandomModel>(seed, o.concentration, idx.vocab_size, max_len,
                                               mode);
  }
  if (kind == "external") {
    const auto timeout = std::chrono::milliseconds(static_cast<long long>(o.timeout_s * 1000));
    return std::make_unique<ExternalModelClient>(Endpoint::parse(rest), idx.vocab_size, max_len,
                                                 timeout);
  }
  throw DomainError("model must be tabular:<path>, seeded:<seed> or external:<endpoint>, got '" +
                    sel + "'");
}

TabularModel open_tabular(const std::string& selector) {
  return TabularModel::load(strip_prefix(selector, "tabular:"));
}

// Keyword set from an index file or a keyword file.
ConstraintSet open_keywords(const std::string& index_path, const std::string& keywords_path,
                            std::uint32_t vocab) {
  if (!index_path.empty()) return load_index(index_path).constraint_set();
  if (!keywords_path.empty()) return read_keywords(keywords_path, Vocabulary(vocab));
  throw DomainError("one of --index or --keywords is required");
}

int classify(const std::exception& e) {
  if (dynamic_cast<const EnumerationBudgetExceeded*>(&e)) return kExitBudget;
  if (dynamic_cast<const TransportError*>(&e) || dynamic_cast<const ProtocolError*>(&e)) {
    return kExitTransport;
  }
  if (dynamic_cast<const IoError*>(&e)) return kExitIo;
  if (dynamic_cast<const ParseError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
      dynamic_cast<const CorruptionError*>(&e) || dynamic_cast<const EmptySetError*>(&e) ||
      dynamic_cast<const TokenOutOfRangeError*>(&e)) {
    return kExitParse;
  }
  if (dynamic_cast<const DomainError*>(&e) || dynamic_cast<const PrefixTooLongError*>(&e)) {
    return kExitUsage;
  }
  return kExitFailure;
}

const char* error_kind(int code) {
  switch (code) {
    case kExitParse: return "input error";
    case kExitIo: return "i/o error";
    case kExitTransport: return "model transport error";
    case kExitBudget: return "enumeration budget exceeded";
    case kExitUsage: return "usage error";
    default: return "error";
  }
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const std::function<T(const std::string&)>& f) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(f(item));
  }
  return out;
}

std::size_t parse_size(const std::string& s) {
  // Accepts plain integers and 1e6-style shorthands.
  const double v = std::stod(s);
  if (!(v >= 0.0) || v != std::floor(v)) throw DomainError("expected a non-negative integer, got '" + s + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Constrained decoding toolkit: keyword indexes, prefix verification and "
               "importance-sampled constrained decoding."};
  app.name("cdk");
  // Options for a subcommand go under its [section] in the --config file;
  // fallthrough lets --config follow the subcommand name.
  app.set_config("--config", "", "Read options from a TOML/INI file ([subcommand] sections); command-line flags win");
  app.fallthrough();
  app.require_subcommand(1);

  std::function<int()> action;

  // build-index
  struct {
    std::string keywords, out, policy = "pow2";
    std::uint32_t vocab = kBenchVocab;
  } bi;
  auto* c_build = app.add_subcommand("build-index", "Build a sorted keyword index file");
  c_build->add_option("--keywords", bi.keywords, "Keyword file, one space-separated token sequence per line")->required();
  c_build->add_option("--vocab", bi.vocab, "Vocabulary size")->capture_default_str();
  c_build->add_option("--bucket-policy", bi.policy, "Length bucketing: pow2 or single")->capture_default_str();
  c_build->add_option("--out", bi.out, "Index file to write")->required();
  c_build->callback([&] {
    action = [&] {
      const auto s = read_keywords(bi.keywords, Vocabulary(bi.vocab));
      const auto idx = build_index(s, parse_policy(bi.policy));
      save_index(idx, bi.out);
      out << "set_size,prefix_free,bucket,min_len,max_len,width,count\n";
      for (std::size_t b = 0; b < idx.buckets.size(); ++b) {
        const auto& bk = idx.buckets[b];
        out << idx.total_count() << ',' << (idx.prefix_free ? "true" : "false") << ',' << b << ','
            << bk.min_len << ',' << bk.max_len << ',' << bk.width << ',' << bk.count() << '\n';
      }
      return int{kExitOk};
    };
  });

  // sample
  struct {
    std::string index, K = "4", mode = "auto";
    ModelOptions model;
    std::uint32_t M = 50;
    double temp = 1.0;
    std::size_t draws = 1;
    std::uint64_t seed = 0;
    bool trace = false;
  } sa;
  auto* c_sample = app.add_subcommand("sample", "Draw keywords with DISC; one CSV row per draw");
  c_sample->add_option("--index", sa.index, "Index file")->required();
  c_sample->add_option("--model", sa.model.selector, "tabular:<path> | seeded:<seed> | external:<stdio:cmd|tcp:host:port>")->required();
  c_sample->add_option("--K", sa.K, "Acceptance rounds before the resampling fallback, or inf")->capture_default_str();
  c_sample->add_option("--M", sa.M, "Top candidate tokens verified per step (default clamped to the vocabulary)")->capture_default_str();
  c_sample->add_option("--temp", sa.temp, "Sampling temperature")->capture_default_str();
  c_sample->add_option("--mode", sa.mode, "Termination: eok, prefixfree or auto (prefixfree when the set allows it)")->capture_default_str();
  c_sample->add_option("--draws", sa.draws, "Number of samples")->capture_default_str();
  c_sample->add_option("--seed", sa.seed, "Random seed")->capture_default_str();
  c_sample->add_option("--concentration", sa.model.concentration, "Dirichlet concentration of the seeded model")->capture_default_str();
  c_sample->add_option("--timeout", sa.model.timeout_s, "External model reply timeout in seconds")->capture_default_str();
  c_sample->add_flag("--trace", sa.trace, "Also print every candidate drawn, to the error stream");
  c_sample->callback([&] {
    action = [&] {
      const auto idx = load_index(sa.index);
      DiscConfig cfg;
      cfg.K = parse_K(sa.K);
      // The default M only makes sense for large vocabularies; an explicit
      // --M is validated as given.
      cfg.M = c_sample->count("--M") ? sa.M : std::min(sa.M, idx.vocab_size);
      cfg.temperature = sa.temp;
      cfg.termination = resolve_mode(sa.mode, idx);
      cfg.seed = sa.seed;
      cfg.validate(idx);
      const auto model = open_model(sa.model, idx, cfg.termination);
      const DiscSampler sampler(*model, idx, cfg);
      out << "draw,sequence,log_importance,rounds_used,candidates_drawn,accepted_by\n";
      for (std::size_t i = 0; i < sa.draws; ++i) {
        Rng rng(sa.seed, i);
        const auto o = sampler.disc_sample(rng);
        out << i << ',' << to_string(o.sequence) << ',' << fmt(o.log_importance) << ','
            << o.rounds_used << ',' << o.candidates_drawn << ',' << to_string(o.accepted_by)
            << '\n';
        if (sa.trace) {
          for (const auto& t : o.trace) {
            err << "trace draw=" << i << " [" << to_string(t.sequence)
                << "] log_x=" << fmt(t.log_importance) << (t.fallback ? " fallback" : "") << '\n';
          }
        }
      }
      return int{kExitOk};
    };
  });

  // evaluate
  struct {
    std::string index, model, Ks = "1,2,3,4", mode = "auto";
    std::size_t draws = 10000;
    std::uint64_t seed = 0;
  } ev;
  auto* c_eval = app.add_subcommand("evaluate", "Exact KL, its upper bound and sampling cost per K for a tabular model");
  c_eval->add_option("--index", ev.index, "Index file (at most 64 keywords)")->required();
  c_eval->add_option("--model", ev.model, "Tabular model, tabular:<path> or <path>")->required();
  c_eval->add_option("--K", ev.Ks, "Comma-separated K values")->capture_default_str();
  c_eval->add_option("--mode", ev.mode, "Termination: eok, prefixfree or auto")->capture_default_str();
  c_eval->add_option("--draws", ev.draws, "Monte Carlo draws per K for the empirical columns")->capture_default_str();
  c_eval->add_option("--seed", ev.seed, "Random seed")->capture_default_str();
  c_eval->callback([&] {
    action = [&] {
      const auto idx = load_index(ev.index);
      const auto s = idx.constraint_set();
      const auto mode = resolve_mode(ev.mode, idx);
      const auto m = open_tabular(ev.model);
      const auto Ks = parse_list<std::uint64_t>(ev.Ks, [](const std::string& t) {
        const auto K = parse_K(t);
        if (K == DiscConfig::kUnbounded) throw DomainError("evaluate needs finite K values");
        return K;
      });
      const double pb = p_bad(m, s, mode);
      const auto target = exact_target(m, s, mode);
      // Generous tolerance: p_b is 1 - sum, so it can sit a hair outside [0, 1).
      const double pb_clamped = std::clamp(pb, 0.0, std::nextafter(1.0, 0.0));
      bool all_pass = true;
      out << "K,p_bad,kl_exact,kl_bound,expected_steps_formula,empirical_mean_rounds,"
             "empirical_tv,status\n";
      for (const auto K : Ks) {
        const double kl_exact = kl(target, exact_disc(m, s, K, mode)).value;
        const double bound = disc_kl_bound(pb_clamped, K);
        const double steps = expected_steps(pb_clamped, K);
        DiscConfig cfg;
        cfg.K = K;
        cfg.M = m.vocab_size();
        cfg.termination = mode;
        cfg.seed = ev.seed;
        const DiscSampler sampler(m, idx, cfg);
        std::map<TokenSeq, std::size_t> counts;
        std::uint64_t drawn = 0;
        for (std::size_t i = 0; i < ev.draws; ++i) {
          Rng rng(ev.seed, i);
          const auto o = sampler.disc_sample(rng);
          drawn += o.candidates_drawn;
          ++counts[o.sequence];
        }
        double tv = 0.0;
        const double n = static_cast<double>(std::max<std::size_t>(ev.draws, 1));
        for (const auto& [seq, p] : target.probs) {
          const auto it = counts.find(seq);
          tv += std::abs((it == counts.end() ? 0.0 : static_cast<double>(it->second) / n) - p);
        }
        const bool pass = kl_exact <= bound + 1e-12;
        all_pass = all_pass && pass;
        out << K << ',' << fmt(pb) << ',' << fmt(kl_exact) << ',' << fmt(bound) << ','
            << fmt(steps) << ',' << fmt(static_cast<double>(drawn) / n, "%.6f") << ','
            << fmt(0.5 * tv, "%.6f") << ',' << (pass ? "PASS" : "FAIL") << '\n';
      }
      return all_pass ? int{kExitOk} : int{kExitFailure};
    };
  });

  // worst-case
  struct {
    double pb = 0.5, eps = 0.1;
    std::string model_out, keywords_out;
  } wc;
  auto* c_worst = app.add_subcommand("worst-case", "Constrained-decoding bias on the two-token worst-case construction");
  c_worst->add_option("--pb", wc.pb, "Probability mass outside the keyword set, in (0, 1)")->capture_default_str();
  c_worst->add_option("--eps", wc.eps, "P(v1 | v2), in (0, 1]")->capture_default_str();
  c_worst->add_option("--model-out", wc.model_out, "Also write the tabular model here");
  c_worst->add_option("--keywords-out", wc.keywords_out, "Also write the keyword set here");
  c_worst->callback([&] {
    action = [&] {
      const double closed = worst_case_kl(wc.pb, wc.eps);
      auto [m, s] = worst_case_model(wc.pb, wc.eps);
      const auto mode = oracle_mode(s);
      const auto target = exact_target(m, s, mode);
      const auto cd = exact_cd(m, s, mode);
      const double generic = kl(target, cd).value;
      out << "quantity,sequence,value\n";
      for (const auto& [seq, p] : target.probs) out << "target," << to_string(seq) << ',' << fmt(p) << '\n';
      for (const auto& [seq, p] : cd.probs) out << "constrained," << to_string(seq) << ',' << fmt(p) << '\n';
      out << "kl_closed_form,," << fmt(closed) << '\n';
      out << "kl_generic,," << fmt(generic) << '\n';
      out << "log_inv_one_minus_pb,," << fmt(std::log(1.0 / (1.0 - wc.pb))) << '\n';
      if (!wc.model_out.empty()) m.save(wc.model_out);
      if (!wc.keywords_out.empty()) {
        std::ofstream f(wc.keywords_out);
        if (!f) throw IoError("cannot open " + wc.keywords_out + " for writing");
        write_keywords(f, s);
        if (!f) throw IoError("write to " + wc.keywords_out + " failed");
      }
      return int{kExitOk};
    };
  });

  // verify
  struct {
    std::string index, prefix, tokens;
  } ve;
  auto* c_verify = app.add_subcommand("verify", "Check which candidate tokens extend a prefix");
  c_verify->add_option("--index", ve.index, "Index file")->required();
  c_verify->add_option("--prefix", ve.prefix, "Space-separated prefix tokens (may be empty)");
  c_verify->add_option("--tokens", ve.tokens, "Space-separated candidate tokens")->required();
  c_verify->callback([&] {
    action = [&] {
      const auto idx = load_index(ve.index);
      const auto prefix = parse_tokens(ve.prefix);
      const auto cands = parse_tokens(ve.tokens);
      const auto mask = ppv_verify(idx, prefix, cands);
      for (const auto t : cands) out << t << ':' << (mask.test(t) ? 1 : 0) << ' ';
      out << "eok:" << (mask.eok_allowed ? 1 : 0) << '\n';
      return int{kExitOk};
    };
  });

  // export-trie
  struct {
    std::string index, keywords, out;
    std::uint32_t vocab = kBenchVocab;
  } ex;
  auto* c_export = app.add_subcommand("export-trie", "Write the reference trie as JSON");
  c_export->add_option("--index", ex.index, "Index file");
  c_export->add_option("--keywords", ex.keywords, "Keyword file (instead of --index)");
  c_export->add_option("--vocab", ex.vocab, "Vocabulary size for --keywords")->capture_default_str();
  c_export->add_option("--out", ex.out, "JSON file to write")->required();
  c_export->callback([&] {
    action = [&] {
      save_trie_json(Trie::build(open_keywords(ex.index, ex.keywords, ex.vocab)), ex.out);
      return int{kExitOk};
    };
  });

  // bench
  struct {
    std::string sizes = "1e3,1e4,1e5,1e6", Ms = "50,100,500,1000", what = "all", out;
    std::size_t queries = 10000, load_reps = 3;
    std::uint64_t seed = 0;
    unsigned batch_workers = 0;
    bool no_timing = false;
  } be;
  auto* c_bench = app.add_subcommand("bench", "PPV vs trie latency and load-time benchmarks (CSV)");
  c_bench->add_option("--sizes", be.sizes, "Comma-separated keyword set sizes")->capture_default_str();
  c_bench->add_option("--Ms", be.Ms, "Comma-separated candidate counts")->capture_default_str();
  c_bench->add_option("--queries", be.queries, "Verification queries per scenario")->capture_default_str();
  c_bench->add_option("--load-reps", be.load_reps, "Repetitions per load measurement")->capture_default_str();
  c_bench->add_option("--what", be.what, "verify, load or all")->capture_default_str();
  c_bench->add_option("--seed", be.seed, "Random seed")->capture_default_str();
  c_bench->add_option("--batch-workers", be.batch_workers, "Threads for an extra batched-throughput row; 0 disables")->capture_default_str();
  c_bench->add_flag("--no-timing", be.no_timing, "Leave timing columns empty");
  c_bench->add_option("--out", be.out, "CSV file (default: standard output)");
  c_bench->callback([&] {
    action = [&] {
      if (be.what != "all" && be.what != "verify" && be.what != "load") {
        throw DomainError("--what must be verify, load or all");
      }
      const auto sizes = parse_list<std::size_t>(be.sizes, parse_size);
      std::vector<BenchReport> rows;
      if (be.what != "load") {
        VerifySweep vs;
        vs.sizes = sizes;
        vs.Ms = parse_list<std::uint32_t>(be.Ms, [](const std::string& t) {
          return static_cast<std::uint32_t>(parse_size(t));
        });
        vs.queries = be.queries;
        vs.seed = be.seed;
        vs.batch_workers = be.batch_workers;
        rows = bench_verify(vs);
      }
      if (be.what != "verify") {
        LoadSweep ls;
        ls.sizes = sizes;
        ls.seed = be.seed;
        ls.repetitions = be.load_reps;
        const auto load = bench_load(ls);
        rows.insert(rows.end(), load.begin(), load.end());
      }
      for (const auto& r : rows) {
        if (!r.note.empty()) err << r.scenario << ' ' << r.backend << ' ' << r.set_size << ": " << r.note << '\n';
      }
      if (be.out.empty()) {
        write_bench_csv(out, rows, !be.no_timing);
      } else {
        std::ofstream f(be.out);
        if (!f) throw IoError("cannot open " + be.out + " for writing");
        write_bench_csv(f, rows, !be.no_timing);
        if (!f) throw IoError("write to " + be.out + " failed");
      }
      return int{kExitOk};
    };
  });

  // quality
  struct {
    std::string index, model, Ks = "1,2,3,4", Ms = "50", mode = "auto";
    std::size_t draws = 10000;
    std::uint64_t seed = 0;
  } qu;
  auto* c_quality = app.add_subcommand("quality", "Empirical TV distance to the exact target over K and M");
  c_quality->add_option("--index", qu.index, "Index file (at most 64 keywords)")->required();
  c_quality->add_option("--model", qu.model, "Tabular model, tabular:<path> or <path>")->required();
  c_quality->add_option("--K", qu.Ks, "Comma-separated K values")->capture_default_str();
  c_quality->add_option("--M", qu.Ms, "Comma-separated M values (clamped to the vocabulary)")->capture_default_str();
  c_quality->add_option("--mode", qu.mode, "Termination: eok, prefixfree or auto")->capture_default_str();
  c_quality->add_option("--draws", qu.draws, "Draws per (K, M)")->capture_default_str();
  c_quality->add_option("--seed", qu.seed, "Random seed")->capture_default_str();
  c_quality->callback([&] {
    action = [&] {
      const auto idx = load_index(qu.index);
      const auto m = open_tabular(qu.model);
      const auto Ks = parse_list<std::uint64_t>(qu.Ks, parse_K);
      const auto Ms = parse_list<std::uint32_t>(qu.Ms, [](const std::string& t) {
        return static_cast<std::uint32_t>(parse_size(t));
      });
      write_quality_csv(out, quality_sweep(m, idx.constraint_set(), Ks, Ms, qu.draws, qu.seed,
                                           resolve_mode(qu.mode, idx)));
      return int{kExitOk};
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "cdk: usage error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    return action();
  } catch (const std::exception& e) {
    const int code = classify(e);
    err << "cdk: " << error_kind(code) << ": " << e.what() << '\n';
    return code;
  }
}

}  // namespace cdk
