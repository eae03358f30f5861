#include "cdk/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "cdk/errors.hpp"

namespace cdk {

namespace {

constexpr char kMagic[8] = {'C', 'D', 'K', 'I', 'D', 'X', '1', '\0'};
constexpr std::uint32_t kVersion = 1;

bool lex_less(const TokenSeq& a, const TokenSeq& b) { return lex_compare(a, b) < 0; }

bool adjacent_prefix_free(const std::vector<TokenSeq>& sorted) {
  // In sorted order a proper prefix of any member is a prefix of its successor.
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (is_prefix(sorted[i - 1], sorted[i])) return false;
  }
  return true;
}

// Same test over an index without materializing the set: each bucket is
// already in keyword order (pads sort lowest), so a k-way merge of the
// buckets visits every keyword in sorted order.
bool index_prefix_free(const SortedIndex& idx) {
  std::vector<std::size_t> pos(idx.buckets.size(), 0);
  std::span<const TokenId> prev;
  bool have_prev = false;
  for (;;) {
    std::size_t best = idx.buckets.size();
    std::span<const TokenId> best_kw;
    for (std::size_t k = 0; k < idx.buckets.size(); ++k) {
      if (pos[k] == idx.buckets[k].count()) continue;
      const auto kw = idx.buckets[k].keyword(pos[k]);
      if (best == idx.buckets.size() || lex_compare(kw, best_kw) < 0) {
        best = k;
        best_kw = kw;
      }
    }
    if (best == idx.buckets.size()) return true;
    if (have_prev && prev.size() < best_kw.size() &&
        std::equal(prev.begin(), prev.end(), best_kw.begin())) {
      return false;
    }
    prev = best_kw;
    have_prev = true;
    ++pos[best];
  }
}

int row_compare(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto ka = cell_key(a[i]);
    const auto kb = cell_key(b[i]);
    if (ka != kb) return ka < kb ? -1 : 1;
  }
  return 0;
}

}  // namespace

ConstraintSet::ConstraintSet(Vocabulary vocab, std::vector<TokenSeq> sequences)
    : vocab_(std::move(vocab)), seqs_(std::move(sequences)) {
  for (const auto& s : seqs_) {
    if (s.empty()) throw DomainError("keywords must be non-empty");
    for (TokenId t : s) {
      if (!vocab_.contains(t)) {
        throw TokenOutOfRangeError("token " + std::to_string(t) + " outside vocabulary of size " +
                                   std::to_string(vocab_.size()));
      }
    }
  }
  std::sort(seqs_.begin(), seqs_.end(), lex_less);
  seqs_.erase(std::unique(seqs_.begin(), seqs_.end()), seqs_.end());
}

bool ConstraintSet::contains(std::span<const TokenId> seq) const {
  auto it = std::lower_bound(seqs_.begin(), seqs_.end(), seq,
                             [](const TokenSeq& a, std::span<const TokenId> b) {
                               return lex_compare(a, b) < 0;
                             });
  return it != seqs_.end() && std::equal(it->begin(), it->end(), seq.begin(), seq.end());
}

std::size_t ConstraintSet::max_len() const noexcept {
  std::size_t m = 0;
  for (const auto& s : seqs_) m = std::max(m, s.size());
  return m;
}

ConstraintSet read_keywords(std::istream& in, const Vocabulary& vocab) {
  std::vector<TokenSeq> seqs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    TokenSeq seq;
    try {
      seq = parse_tokens(line);
    } catch (const ParseError&) {
      throw ParseError("line " + std::to_string(lineno) + ": malformed keyword '" + line + "'");
    }
    if (seq.empty()) continue;
    for (TokenId t : seq) {
      if (!vocab.contains(t)) {
        throw TokenOutOfRangeError("line " + std::to_string(lineno) + ": token " +
                                   std::to_string(t) + " >= vocab size " +
                                   std::to_string(vocab.size()));
      }
    }
    seqs.push_back(std::move(seq));
  }
  return ConstraintSet(vocab, std::move(seqs));
}

ConstraintSet read_keywords(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open keyword file " + path.string());
  return read_keywords(in, vocab);
}

void write_keywords(std::ostream& out, const ConstraintSet& s) {
  for (const auto& seq : s.sequences()) out << to_string(seq) << '\n';
}

bool check_prefix_free(const ConstraintSet& s) { return adjacent_prefix_free(s.sequences()); }

std::uint32_t pow2_bucket_of(std::uint32_t length) noexcept {
  return static_cast<std::uint32_t>(std::bit_width(length)) - 1;
}

std::size_t SortedIndex::total_count() const noexcept {
  std::size_t n = 0;
  for (const auto& b : buckets) n += b.count();
  return n;
}

std::size_t SortedIndex::max_len() const noexcept {
  std::size_t m = 0;
  for (const auto& b : buckets) m = std::max<std::size_t>(m, b.max_len);
  return m;
}

std::vector<TokenSeq> SortedIndex::sequences() const {
  std::vector<TokenSeq> out;
  out.reserve(total_count());
  for (const auto& b : buckets) {
    for (std::size_t i = 0; i < b.count(); ++i) {
      auto kw = b.keyword(i);
      out.emplace_back(kw.begin(), kw.end());
    }
  }
  std::sort(out.begin(), out.end(), lex_less);
  return out;
}

ConstraintSet SortedIndex::constraint_set() const {
  return ConstraintSet(Vocabulary(vocab_size), sequences());
}

SortedIndex build_index(const ConstraintSet& s, BucketPolicy policy) {
  if (s.empty()) throw EmptySetError("empty constraint set");

  // Sequences arrive sorted; a stable partition by bucket keeps each sorted.
  std::vector<std::vector<const TokenSeq*>> groups;
  for (const auto& seq : s.sequences()) {
    const auto len = static_cast<std::uint32_t>(seq.size());
    const std::size_t g = policy == BucketPolicy::Single ? 0 : pow2_bucket_of(len);
    if (groups.size() <= g) groups.resize(g + 1);
    groups[g].push_back(&seq);
  }

  SortedIndex idx;
  idx.vocab_size = s.vocab().size();
  for (const auto& group : groups) {
    if (group.empty()) continue;
    Bucket b;
    b.min_len = static_cast<std::uint32_t>(group.front()->size());
    b.max_len = b.min_len;
    for (const auto* seq : group) {
      const auto len = static_cast<std::uint32_t>(seq->size());
      b.min_len = std::min(b.min_len, len);
      b.max_len = std::max(b.max_len, len);
    }
    b.width = b.max_len;
    b.true_lengths.reserve(group.size());
    b.cells.assign(group.size() * b.width, kPad);
    for (std::size_t i = 0; i < group.size(); ++i) {
      b.true_lengths.push_back(static_cast<std::uint32_t>(group[i]->size()));
      std::copy(group[i]->begin(), group[i]->end(), b.cells.begin() + i * b.width);
    }
    idx.buckets.push_back(std::move(b));
  }
  idx.prefix_free = check_prefix_free(s);
  return idx;
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Binary format

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 4);
  }
  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 8);
  }
  void u32_array(std::span<const std::uint32_t> v) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(v.data(), v.size_bytes());
    } else {
      for (auto x : v) u32(x);
    }
  }
  std::vector<unsigned char>& buffer() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const unsigned char> b) : b_(b) {}
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw FormatError("index file truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  void u32_array(std::vector<std::uint32_t>& out, std::size_t n) {
    if (n > (b_.size() - pos_) / 4) throw FormatError("index file truncated");
    out.resize(n);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out.data(), b_.data() + pos_, n * 4);
      pos_ += n * 4;
    } else {
      for (auto& x : out) x = u32();
    }
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  std::span<const unsigned char> b_;
  std::size_t pos_ = 0;
};

void validate_bucket(const Bucket& b, std::uint32_t vocab_size, std::size_t index) {
  const std::string where = "bucket " + std::to_string(index) + ": ";
  if (b.width == 0) throw CorruptionError(where + "zero width");
  if (b.count() == 0) throw CorruptionError(where + "empty bucket");
  if (b.min_len == 0 || b.min_len > b.max_len || b.max_len > b.width) {
    throw CorruptionError(where + "inconsistent length range");
  }
  for (std::size_t i = 0; i < b.count(); ++i) {
    const auto len = b.true_lengths[i];
    if (len < b.min_len || len > b.max_len) {
      throw CorruptionError(where + "row " + std::to_string(i) + " length outside range");
    }
    auto row = b.row(i);
    for (std::size_t c = 0; c < b.width; ++c) {
      const bool pad = row[c] == kPad;
      if (c < len && (pad || row[c] >= vocab_size)) {
        throw CorruptionError(where + "row " + std::to_string(i) + " has an invalid token cell");
      }
      if (c >= len && !pad) {
        throw CorruptionError(where + "row " + std::to_string(i) + " has a token past its length");
      }
    }
    if (i > 0 && row_compare(b.row(i - 1), row) >= 0) {
      throw CorruptionError(where + "rows " + std::to_string(i - 1) + " and " +
                            std::to_string(i) + " out of order");
    }
  }
}

}  // namespace

void write_index(const SortedIndex& idx, std::ostream& out) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kVersion);
  w.u32(idx.vocab_size);
  w.u32(static_cast<std::uint32_t>(idx.buckets.size()));
  for (const auto& b : idx.buckets) {
    w.u32(b.width);
    w.u32(static_cast<std::uint32_t>(b.count()));
    w.u32(b.min_len);
    w.u32(b.max_len);
    w.u32_array(b.true_lengths);
    w.u32_array(b.cells);
  }
  w.u64(fnv1a64(w.buffer()));
  const auto& buf = w.buffer();
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

void save_index(const SortedIndex& idx, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_index(idx, out);
  out.flush();
  if (!out) throw IoError("write to " + path.string() + " failed");
}

SortedIndex read_index(std::span<const unsigned char> bytes) {
  if (bytes.size() < sizeof kMagic + 12 + 8) throw FormatError("index file too short");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw FormatError("bad magic bytes");

  const auto body = bytes.first(bytes.size() - 8);
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) {
    stored |= static_cast<std::uint64_t>(bytes[body.size() + i]) << (8 * i);
  }
  if (fnv1a64(body) != stored) throw FormatError("checksum mismatch");

  Reader hdr(body.subspan(sizeof kMagic));
  const auto version = hdr.u32();
  if (version != kVersion) throw FormatError("unsupported version " + std::to_string(version));

  SortedIndex idx;
  idx.vocab_size = hdr.u32();
  if (idx.vocab_size == 0) throw CorruptionError("zero vocabulary size");
  const auto bucket_count = hdr.u32();
  for (std::uint32_t k = 0; k < bucket_count; ++k) {
    Bucket b;
    b.width = hdr.u32();
    const auto count = hdr.u32();
    b.min_len = hdr.u32();
    b.max_len = hdr.u32();
    hdr.u32_array(b.true_lengths, count);
    hdr.u32_array(b.cells, static_cast<std::size_t>(count) * b.width);
    validate_bucket(b, idx.vocab_size, k);
    if (!idx.buckets.empty() && idx.buckets.back().max_len >= b.min_len) {
      throw CorruptionError("bucket " + std::to_string(k) + " length range overlaps its predecessor");
    }
    idx.buckets.push_back(std::move(b));
  }
  if (hdr.remaining() != 0) throw FormatError("trailing bytes after last bucket");
  if (idx.buckets.empty()) throw CorruptionError("index has no buckets");
  idx.prefix_free = index_prefix_free(idx);
  return idx;
}

SortedIndex load_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open index file " + path.string());
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<unsigned char> bytes(size);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
    throw IoError("read of " + path.string() + " failed");
  }
  return read_index(bytes);
}

}  // namespace cdk
