#include "cdk/trie.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cdk/errors.hpp"

namespace cdk {

// Collects nodes in preorder (parent, label, terminal) and packs them into
// the edge-range layout.
class TrieAssembler {
 public:
  Trie::NodeId add_root() {
    parent_.push_back(0);
    label_.push_back(0);
    terminal_.push_back(0);
    depth_.push_back(0);
    return 0;
  }
  Trie::NodeId add_child(Trie::NodeId parent, TokenId label) {
    const auto id = static_cast<Trie::NodeId>(terminal_.size());
    parent_.push_back(parent);
    label_.push_back(label);
    terminal_.push_back(0);
    depth_.push_back(depth_[parent] + 1);
    return id;
  }
  void mark_terminal(Trie::NodeId n, bool v = true) { terminal_[n] = v ? 1 : 0; }
  std::size_t size() const { return terminal_.size(); }

  Trie finish(std::uint32_t vocab_size) {
    Trie t;
    t.vocab_size_ = vocab_size;
    const std::size_t n = terminal_.size();
    t.edge_begin_.assign(n + 1, 0);
    for (std::size_t i = 1; i < n; ++i) ++t.edge_begin_[parent_[i] + 1];
    for (std::size_t i = 0; i < n; ++i) t.edge_begin_[i + 1] += t.edge_begin_[i];
    t.edge_label_.resize(n ? n - 1 : 0);
    t.edge_target_.resize(n ? n - 1 : 0);
    std::vector<std::uint32_t> fill(t.edge_begin_.begin(), t.edge_begin_.end() - 1);
    for (std::size_t i = 1; i < n; ++i) {
      const auto slot = fill[parent_[i]]++;
      t.edge_label_[slot] = label_[i];
      t.edge_target_[slot] = static_cast<Trie::NodeId>(i);
    }
    for (std::size_t v = 0; v < n; ++v) {
      const auto b = t.edge_begin_[v];
      const auto e = t.edge_begin_[v + 1];
      bool sorted = true;
      for (auto k = b + 1; k < e; ++k) {
        if (t.edge_label_[k - 1] >= t.edge_label_[k]) {
          sorted = false;
          break;
        }
      }
      if (!sorted) {
        std::vector<std::pair<TokenId, Trie::NodeId>> edges;
        for (auto k = b; k < e; ++k) edges.emplace_back(t.edge_label_[k], t.edge_target_[k]);
        std::sort(edges.begin(), edges.end());
        for (std::size_t k = 1; k < edges.size(); ++k) {
          if (edges[k - 1].first == edges[k].first) {
            throw FormatError("duplicate child label " + std::to_string(edges[k].first));
          }
        }
        for (auto k = b; k < e; ++k) {
          t.edge_label_[k] = edges[k - b].first;
          t.edge_target_[k] = edges[k - b].second;
        }
      }
      if (b == e && v != 0 && !terminal_[v]) throw FormatError("leaf node is not terminal");
    }
    for (TokenId l : t.edge_label_) {
      if (l >= vocab_size) throw FormatError("child label " + std::to_string(l) + " out of range");
    }
    if (n > 0 && terminal_[0]) throw FormatError("root cannot be terminal");
    for (std::size_t v = 0; v < n; ++v) {
      t.max_depth_ = std::max<std::size_t>(t.max_depth_, depth_[v]);
    }
    t.terminal_ = std::move(terminal_);
    return t;
  }

 private:
  std::vector<Trie::NodeId> parent_;
  std::vector<TokenId> label_;
  std::vector<std::uint8_t> terminal_;
  std::vector<std::uint32_t> depth_;
};

Trie Trie::build(const ConstraintSet& s) {
  TrieAssembler a;
  a.add_root();
  // Sorted input visits nodes in preorder; path[d] is the node at depth d.
  std::vector<NodeId> path{kRoot};
  const TokenSeq* prev = nullptr;
  for (const auto& seq : s.sequences()) {
    std::size_t common = 0;
    if (prev) {
      while (common < prev->size() && common < seq.size() && (*prev)[common] == seq[common]) {
        ++common;
      }
    }
    path.resize(common + 1);
    for (std::size_t d = common; d < seq.size(); ++d) path.push_back(a.add_child(path.back(), seq[d]));
    a.mark_terminal(path.back());
    prev = &seq;
  }
  return a.finish(s.vocab().size());
}

std::optional<Trie::NodeId> Trie::child(NodeId n, TokenId t) const {
  const auto b = edge_label_.begin() + edge_begin_.at(n);
  const auto e = edge_label_.begin() + edge_begin_.at(n + 1);
  auto it = std::lower_bound(b, e, t);
  if (it == e || *it != t) return std::nullopt;
  return edge_target_[static_cast<std::size_t>(it - edge_label_.begin())];
}

std::optional<Trie::NodeId> Trie::find(std::span<const TokenId> prefix) const {
  NodeId n = kRoot;
  for (TokenId t : prefix) {
    auto c = child(n, t);
    if (!c) return std::nullopt;
    n = *c;
  }
  return n;
}

std::span<const TokenId> Trie::labels(NodeId n) const {
  return {edge_label_.data() + edge_begin_.at(n), edge_begin_.at(n + 1) - edge_begin_.at(n)};
}

std::vector<TokenSeq> Trie::sequences() const {
  std::vector<TokenSeq> out;
  TokenSeq path;
  // Explicit stack of (node, next edge slot).
  std::vector<std::pair<NodeId, std::uint32_t>> stack{{kRoot, edge_begin_[kRoot]}};
  while (!stack.empty()) {
    auto& [node, slot] = stack.back();
    if (slot == edge_begin_[node] && terminal(node)) out.push_back(path);
    if (slot < edge_begin_[node + 1]) {
      const auto k = slot++;
      path.push_back(edge_label_[k]);
      const NodeId next = edge_target_[k];
      stack.emplace_back(next, edge_begin_[next]);
    } else {
      stack.pop_back();
      if (!path.empty()) path.pop_back();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON text form

void Trie::write_json(std::ostream& out) const {
  std::string buf;
  buf.reserve(1 << 16);
  auto flush = [&] {
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    buf.clear();
  };
  buf += "{\"vocab_size\":" + std::to_string(vocab_size_) + ",\"root\":";
  std::vector<std::pair<NodeId, std::uint32_t>> stack{{kRoot, edge_begin_[kRoot]}};
  buf += terminal(kRoot) ? "{\"end\":true,\"next\":{" : "{\"end\":false,\"next\":{";
  while (!stack.empty()) {
    auto& [node, slot] = stack.back();
    if (slot < edge_begin_[node + 1]) {
      if (slot != edge_begin_[node]) buf += ',';
      const auto k = slot++;
      const NodeId next = edge_target_[k];
      buf += '"';
      buf += std::to_string(edge_label_[k]);
      buf += terminal(next) ? "\":{\"end\":true,\"next\":{" : "\":{\"end\":false,\"next\":{";
      stack.emplace_back(next, edge_begin_[next]);
    } else {
      buf += "}}";
      stack.pop_back();
    }
    if (buf.size() > (1 << 16) - 64) flush();
  }
  buf += "}\n";
  flush();
}

std::string Trie::to_json() const {
  std::ostringstream out;
  write_json(out);
  return out.str();
}

namespace {

using json = nlohmann::json;

class TrieSaxHandler : public nlohmann::json_sax<json> {
 public:
  bool null() override { return fail("unexpected null"); }
  bool boolean(bool v) override {
    if (frames_.empty() || frames_.back().kind != Kind::Node || key_ != "end") {
      return fail("unexpected boolean");
    }
    asm_.mark_terminal(frames_.back().node, v);
    return true;
  }
  bool number_integer(number_integer_t v) override {
    if (v < 0) return fail("negative number");
    return number_unsigned(static_cast<number_unsigned_t>(v));
  }
  bool number_unsigned(number_unsigned_t v) override {
    if (frames_.size() != 1 || key_ != "vocab_size" || v == 0 || v > 0xFFFFFFFEull) {
      return fail("unexpected number");
    }
    vocab_size_ = static_cast<std::uint32_t>(v);
    return true;
  }
  bool number_float(number_float_t, const string_t&) override { return fail("unexpected number"); }
  bool string(string_t&) override { return fail("unexpected string"); }
  bool binary(binary_t&) override { return fail("unexpected binary"); }
  bool start_array(std::size_t) override { return fail("unexpected array"); }
  bool end_array() override { return fail("unexpected array"); }

  bool start_object(std::size_t) override {
    if (frames_.empty()) {
      if (seen_top_) return fail("multiple documents");
      seen_top_ = true;
      frames_.push_back({Kind::Top, 0});
      return true;
    }
    const Frame top = frames_.back();
    switch (top.kind) {
      case Kind::Top:
        if (key_ != "root" || asm_.size() != 0) return fail("unexpected object");
        frames_.push_back({Kind::Node, asm_.add_root()});
        return true;
      case Kind::Node:
        if (key_ != "next") return fail("unexpected object in node");
        frames_.push_back({Kind::Next, top.node});
        return true;
      case Kind::Next: {
        TokenId label = 0;
        auto [p, ec] = std::from_chars(key_.data(), key_.data() + key_.size(), label);
        if (ec != std::errc{} || p != key_.data() + key_.size() || key_.empty()) {
          return fail("child key is not a token id");
        }
        frames_.push_back({Kind::Node, asm_.add_child(top.node, label)});
        return true;
      }
    }
    return false;
  }
  bool key(string_t& k) override {
    key_ = k;
    return true;
  }
  bool end_object() override {
    frames_.pop_back();
    return true;
  }
  bool parse_error(std::size_t pos, const std::string&, const nlohmann::detail::exception& e) override {
    error_ = "JSON syntax error at byte " + std::to_string(pos) + ": " + e.what();
    return false;
  }

  Trie finish() {
    if (!error_.empty()) throw FormatError("trie: " + error_);
    if (vocab_size_ == 0) throw FormatError("trie: missing vocab_size");
    if (asm_.size() == 0) throw FormatError("trie: missing root");
    return asm_.finish(vocab_size_);
  }

 private:
  enum class Kind { Top, Node, Next };
  struct Frame {
    Kind kind;
    Trie::NodeId node;
  };

  bool fail(const std::string& msg) {
    if (error_.empty()) error_ = msg;
    return false;
  }

  TrieAssembler asm_;
  std::vector<Frame> frames_;
  std::string key_;
  std::string error_;
  std::uint32_t vocab_size_ = 0;
  bool seen_top_ = false;
};

Trie parse_trie(const std::string& text) {
  TrieSaxHandler handler;
  const bool ok = json::sax_parse(text, &handler);
  if (!ok) {
    handler.finish();  // throws with the recorded reason
    throw FormatError("trie: malformed document");
  }
  return handler.finish();
}

}  // namespace

Trie Trie::from_json(const std::string& text) { return parse_trie(text); }

Trie Trie::from_json(std::istream& in) {
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_trie(buf.str());
}

void save_trie_json(const Trie& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  t.write_json(out);
  out.flush();
  if (!out) throw IoError("write to " + path.string() + " failed");
}

Trie load_trie_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::ate);
  if (!in) throw IoError("cannot open trie file " + path.string());
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::string text(size, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(size))) {
    throw IoError("read of " + path.string() + " failed");
  }
  return parse_trie(text);
}

// ---------------------------------------------------------------------------

std::vector<bool> trie_verify_candidates(const Trie& t, std::span<const TokenId> prefix,
                                         std::span<const TokenId> candidates) {
  if (prefix.size() >= t.max_len()) {
    throw PrefixTooLongError("prefix of length " + std::to_string(prefix.size()) +
                             " cannot be extended within keywords of length <= " +
                             std::to_string(t.max_len()));
  }
  for (TokenId c : candidates) {
    if (c >= t.vocab_size()) {
      throw TokenOutOfRangeError("candidate token " + std::to_string(c) + " outside vocabulary");
    }
  }
  std::vector<TokenId> sorted(candidates.begin(), candidates.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw DomainError("candidate tokens must be distinct");
  }

  std::vector<bool> valid(candidates.size(), false);
  const auto node = t.find(prefix);
  if (!node) return valid;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    valid[i] = t.child(*node, candidates[i]).has_value();
  }
  return valid;
}

Mask trie_verify(const Trie& t, std::span<const TokenId> prefix,
                 std::span<const TokenId> candidates) {
  const auto valid = trie_verify_candidates(t, prefix, candidates);
  Mask mask(t.vocab_size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (valid[i]) mask.set(candidates[i]);
  }
  const auto node = t.find(prefix);
  mask.eok_allowed = node && t.terminal(*node);
  return mask;
}

Mask trie_full_valid_set(const Trie& t, std::span<const TokenId> prefix) {
  if (prefix.size() >= t.max_len()) {
    throw PrefixTooLongError("prefix of length " + std::to_string(prefix.size()) + " too long");
  }
  Mask mask(t.vocab_size());
  if (const auto node = t.find(prefix)) {
    for (TokenId l : t.labels(*node)) mask.set(l);
    mask.eok_allowed = t.terminal(*node);
  }
  return mask;
}

}  // namespace cdk
