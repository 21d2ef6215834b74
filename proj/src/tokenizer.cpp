#include "tokenizer.hpp"

#include <algorithm>
#include <limits>
#include <set>

#include "common.hpp"

namespace tod {

using nlohmann::json;

namespace {

// Reversible byte <-> printable code point table (the GPT-2 convention), used
// only to keep merge symbols valid UTF-8 inside the vocab file.
const std::array<char32_t, 256>& byte_to_codepoint() {
  static const std::array<char32_t, 256> table = [] {
    std::array<char32_t, 256> t{};
    std::array<bool, 256> direct{};
    for (int b = '!'; b <= '~'; ++b) direct[static_cast<std::size_t>(b)] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) direct[static_cast<std::size_t>(b)] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) direct[static_cast<std::size_t>(b)] = true;
    char32_t next = 256;
    for (int b = 0; b < 256; ++b)
      t[static_cast<std::size_t>(b)] = direct[static_cast<std::size_t>(b)]
                                           ? static_cast<char32_t>(b)
                                           : next++;
    return t;
  }();
  return table;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::string bytes_to_printable(const std::string& bytes) {
  std::string out;
  for (unsigned char b : bytes) append_utf8(out, byte_to_codepoint()[b]);
  return out;
}

std::string printable_to_bytes(const std::string& text) {
  static const std::map<char32_t, unsigned char> inverse = [] {
    std::map<char32_t, unsigned char> m;
    for (int b = 0; b < 256; ++b)
      m[byte_to_codepoint()[static_cast<std::size_t>(b)]] = static_cast<unsigned char>(b);
    return m;
  }();
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    auto c = static_cast<unsigned char>(text[i]);
    char32_t cp;
    int len;
    if (c < 0x80) {
      cp = c;
      len = 1;
    } else if ((c & 0xE0) == 0xC0) {
      cp = c & 0x1F;
      len = 2;
    } else if ((c & 0xF0) == 0xE0) {
      cp = c & 0x0F;
      len = 3;
    } else {
      throw Error(ErrorCode::format, "vocab merge symbol is not in the byte alphabet");
    }
    if (i + static_cast<std::size_t>(len) > text.size())
      throw Error(ErrorCode::format, "truncated UTF-8 in vocab merge symbol");
    for (int k = 1; k < len; ++k) cp = (cp << 6) | (static_cast<unsigned char>(text[i + k]) & 0x3F);
    auto it = inverse.find(cp);
    if (it == inverse.end())
      throw Error(ErrorCode::format, "vocab merge symbol is not in the byte alphabet");
    out.push_back(static_cast<char>(it->second));
    i += static_cast<std::size_t>(len);
  }
  return out;
}

// Plain text is cut before every space so BPE never merges across words.
template <typename Fn>
void for_each_chunk(std::string_view text, Fn&& fn) {
  std::size_t start = 0;
  for (std::size_t i = 1; i <= text.size(); ++i) {
    if (i == text.size() || text[i] == ' ') {
      if (i > start) fn(text.substr(start, i - start));
      start = i;
    }
  }
}

}  // namespace

Vocab::Vocab(const std::vector<std::string>& extra_specials) {
  for (auto s : kCoreSpecials) add_special(std::string(s));
  for (int b = 0; b < 256; ++b) {
    std::string piece(1, static_cast<char>(b));
    symbol_ids_.emplace(piece, static_cast<TokenId>(pieces_.size()));
    pieces_.push_back(std::move(piece));
    special_flag_.push_back(false);
  }
  for (const auto& s : extra_specials) add_special(s);
}

void Vocab::add_special(const std::string& token) {
  if (token.empty()) throw Error(ErrorCode::invalid_argument, "empty special token");
  if (special_ids_.contains(token))
    throw Error(ErrorCode::invalid_argument, "duplicate special token '" + token + "'");
  const auto id = static_cast<TokenId>(pieces_.size());
  special_ids_.emplace(token, id);
  special_names_.push_back(token);
  pieces_.push_back(token);
  special_flag_.push_back(true);
  if (special_first_chars_.find(token.front()) == std::string::npos)
    special_first_chars_.push_back(token.front());
}

TokenId Vocab::add_merge(TokenId left, TokenId right) {
  if (is_special(left) || is_special(right))
    throw Error(ErrorCode::invalid_argument, "cannot merge special tokens");
  if (merge_rank_.contains({left, right}))
    throw Error(ErrorCode::format, "duplicate merge");
  if (special_names_.size() > kCoreSpecials.size())
    throw Error(ErrorCode::invalid_argument, "merges must precede extra specials");
  std::string bytes = piece(left) + piece(right);
  TokenId id;
  if (auto it = symbol_ids_.find(bytes); it != symbol_ids_.end()) {
    id = it->second;
  } else {
    id = static_cast<TokenId>(pieces_.size());
    symbol_ids_.emplace(bytes, id);
    pieces_.push_back(std::move(bytes));
    special_flag_.push_back(false);
  }
  merge_rank_[{left, right}] = {merges_.size(), id};
  merges_.emplace_back(left, right);
  return id;
}

std::optional<TokenId> Vocab::special_id(std::string_view token) const {
  auto it = special_ids_.find(std::string(token));
  if (it == special_ids_.end()) return std::nullopt;
  return it->second;
}

bool Vocab::is_special(TokenId id) const {
  return id >= 0 && static_cast<std::size_t>(id) < special_flag_.size() &&
         special_flag_[static_cast<std::size_t>(id)];
}

const std::string& Vocab::piece(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= pieces_.size())
    throw Error(ErrorCode::invalid_argument, "token id " + std::to_string(id) + " out of range");
  return pieces_[static_cast<std::size_t>(id)];
}

void Vocab::bpe_chunk(std::string_view chunk, std::vector<TokenId>& out) const {
  std::vector<TokenId> syms;
  syms.reserve(chunk.size());
  for (unsigned char c : chunk) syms.push_back(kFirstByte + c);
  while (syms.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    std::pair<TokenId, TokenId> best{};
    TokenId best_id = 0;
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      auto it = merge_rank_.find({syms[i], syms[i + 1]});
      if (it != merge_rank_.end() && it->second.first < best_rank) {
        best_rank = it->second.first;
        best = it->first;
        best_id = it->second.second;
      }
    }
    if (best_rank == std::numeric_limits<std::size_t>::max()) break;
    std::vector<TokenId> next;
    next.reserve(syms.size());
    for (std::size_t i = 0; i < syms.size(); ++i) {
      if (i + 1 < syms.size() && syms[i] == best.first && syms[i + 1] == best.second) {
        next.push_back(best_id);
        ++i;
      } else {
        next.push_back(syms[i]);
      }
    }
    syms.swap(next);
  }
  out.insert(out.end(), syms.begin(), syms.end());
}

void Vocab::encode_plain(std::string_view text, std::vector<TokenId>& out) const {
  for_each_chunk(text, [&](std::string_view chunk) { bpe_chunk(chunk, out); });
}

std::vector<TokenId> Vocab::encode(std::string_view text) const {
  std::vector<TokenId> out;
  // Longest specials first so a special that prefixes another never wins.
  std::vector<const std::string*> by_length;
  for (const auto& s : special_names_) by_length.push_back(&s);
  std::stable_sort(by_length.begin(), by_length.end(),
                   [](const std::string* a, const std::string* b) { return a->size() > b->size(); });

  std::size_t plain_start = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    if (special_first_chars_.find(text[i]) != std::string::npos) {
      const std::string* hit = nullptr;
      for (const auto* s : by_length)
        if (text.compare(i, s->size(), *s) == 0) {
          hit = s;
          break;
        }
      if (hit) {
        encode_plain(text.substr(plain_start, i - plain_start), out);
        out.push_back(special_ids_.at(*hit));
        i += hit->size();
        plain_start = i;
        continue;
      }
    }
    ++i;
  }
  encode_plain(text.substr(plain_start), out);
  return out;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) out += piece(id);
  return out;
}

json Vocab::to_json() const {
  json merges = json::array();
  for (const auto& [l, r] : merges_)
    merges.push_back({bytes_to_printable(piece(l)), bytes_to_printable(piece(r))});
  return json{{"version", kFormatVersion}, {"specials", special_names_}, {"merges", merges}};
}

Vocab Vocab::from_json(const json& doc) {
  try {
    const int version = doc.at("version").get<int>();
    if (version != kFormatVersion)
      throw Error(ErrorCode::version_mismatch,
                  "unsupported vocab version " + std::to_string(version));
    const auto specials = doc.at("specials").get<std::vector<std::string>>();
    if (specials.size() < kCoreSpecials.size() ||
        !std::equal(kCoreSpecials.begin(), kCoreSpecials.end(), specials.begin()))
      throw Error(ErrorCode::format, "vocab specials must start with the core specials");
    Vocab v;
    for (const auto& m : doc.at("merges")) {
      const auto left = printable_to_bytes(m.at(0).get<std::string>());
      const auto right = printable_to_bytes(m.at(1).get<std::string>());
      auto l = v.symbol_ids_.find(left);
      auto r = v.symbol_ids_.find(right);
      if (l == v.symbol_ids_.end() || r == v.symbol_ids_.end())
        throw Error(ErrorCode::format, "merge refers to an unknown symbol");
      v.add_merge(l->second, r->second);
    }
    for (std::size_t i = kCoreSpecials.size(); i < specials.size(); ++i) v.add_special(specials[i]);
    return v;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::format, std::string("malformed vocab: ") + e.what());
  }
}

void Vocab::save(const std::string& path) const { write_file(path, to_json().dump() + "\n"); }

Vocab Vocab::load(const std::string& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::parse, path + ": " + e.what());
  }
  return from_json(doc);
}

std::string Vocab::hash() const { return to_hex(fnv1a64(to_json().dump())); }

Vocab train_bpe(const std::vector<std::string>& texts, std::size_t target_vocab_size,
                const std::vector<std::string>& extra_specials) {
  if (texts.empty()) throw Error(ErrorCode::invalid_argument, "BPE training corpus is empty");
  const std::size_t base = Vocab::kCoreSpecials.size() + 256 + extra_specials.size();
  if (target_vocab_size < base)
    throw Error(ErrorCode::invalid_argument,
                "target vocab size " + std::to_string(target_vocab_size) +
                    " is below alphabet plus specials (" + std::to_string(base) + ")");

  // Specials are cut out of the training text; they never take part in merges.
  const Vocab specials_only(extra_specials);
  std::map<std::string, long> chunk_counts;
  for (const auto& text : texts) {
    std::string plain;
    for (TokenId id : specials_only.encode(text)) {
      if (specials_only.is_special(id)) {
        for_each_chunk(plain, [&](std::string_view c) { ++chunk_counts[std::string(c)]; });
        plain.clear();
      } else {
        plain += specials_only.piece(id);
      }
    }
    for_each_chunk(plain, [&](std::string_view c) { ++chunk_counts[std::string(c)]; });
  }

  struct Word {
    std::vector<TokenId> syms;
    long count;
  };
  std::vector<Word> words;
  for (const auto& [chunk, count] : chunk_counts) {
    Word w{{}, count};
    for (unsigned char c : chunk) w.syms.push_back(Vocab::kFirstByte + c);
    words.push_back(std::move(w));
  }

  Vocab vocab;
  while (vocab.size() + extra_specials.size() < target_vocab_size) {
    std::map<std::pair<TokenId, TokenId>, long> pairs;
    for (const auto& w : words)
      for (std::size_t i = 0; i + 1 < w.syms.size(); ++i) pairs[{w.syms[i], w.syms[i + 1]}] += w.count;
    if (pairs.empty()) break;
    auto best = pairs.begin();
    for (auto it = std::next(pairs.begin()); it != pairs.end(); ++it) {
      if (it->second > best->second) {
        best = it;
      } else if (it->second == best->second) {
        const auto key = [&](const auto& p) {
          return std::pair<const std::string&, const std::string&>(vocab.piece(p.first),
                                                                  vocab.piece(p.second));
        };
        if (key(it->first) < key(best->first)) best = it;
      }
    }
    const auto [left, right] = best->first;
    const TokenId merged = vocab.add_merge(left, right);
    for (auto& w : words) {
      std::vector<TokenId> next;
      next.reserve(w.syms.size());
      for (std::size_t i = 0; i < w.syms.size(); ++i) {
        if (i + 1 < w.syms.size() && w.syms[i] == left && w.syms[i + 1] == right) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(w.syms[i]);
        }
      }
      w.syms.swap(next);
    }
  }
  for (const auto& s : extra_specials) vocab.add_special(s);
  return vocab;
}

Vocab add_special_tokens(const Vocab& vocab, const std::vector<std::string>& tokens) {
  Vocab out = vocab;
  std::set<std::string> seen;
  for (const auto& t : tokens) {
    if (!seen.insert(t).second || out.special_id(t))
      throw Error(ErrorCode::invalid_argument, "duplicate special token '" + t + "'");
  }
  for (const auto& t : tokens) out.add_special(t);
  return out;
}

TokenSequence encode_context(const Vocab& vocab, const ContextText& ctx) {
  TokenSequence seq;
  seq.push(Vocab::kBos, Role::user);
  for (const auto& span : ctx.spans) {
    seq.push(span.role == Role::user ? Vocab::kUser : Vocab::kSystem, span.role);
    for (TokenId id : vocab.encode(std::string_view(ctx.text).substr(span.begin, span.end - span.begin)))
      seq.push(id, span.role);
  }
  seq.push(Vocab::kSystem, Role::system);
  return seq;
}

void append_reply(TokenSequence& seq, std::span<const TokenId> reply) {
  for (TokenId id : reply) seq.push(id, Role::system);
  seq.push(Vocab::kEos, Role::system);
}

}  // namespace tod
