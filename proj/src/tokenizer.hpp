#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "context_codec.hpp"
#include "json.hpp"

namespace tod {

using TokenId = std::int32_t;

// Byte-level BPE vocabulary.
//
// Id layout: the five core specials (`<pad>` = 0, `<bos>`, `<eos>`,
// `<system>`, `<user>`), the 256 single bytes, one id per distinct merged
// symbol in merge order, then every further special in registration order.
// Specials are matched as whole units before BPE runs and never split.
class Vocab {
 public:
  static constexpr std::array<std::string_view, 5> kCoreSpecials = {
      "<pad>", "<bos>", "<eos>", "<system>", "<user>"};
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kSystem = 3;
  static constexpr TokenId kUser = 4;
  static constexpr TokenId kFirstByte = 5;
  static constexpr int kFormatVersion = 1;

  // Byte alphabet plus specials; no merges.
  explicit Vocab(const std::vector<std::string>& extra_specials = {});

  std::size_t size() const noexcept { return pieces_.size(); }
  std::size_t merge_count() const noexcept { return merges_.size(); }
  const std::vector<std::pair<TokenId, TokenId>>& merges() const noexcept { return merges_; }
  const std::vector<std::string>& specials() const noexcept { return special_names_; }

  std::optional<TokenId> special_id(std::string_view token) const;
  bool is_special(TokenId id) const;
  const std::string& piece(TokenId id) const;

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

  nlohmann::json to_json() const;
  static Vocab from_json(const nlohmann::json& doc);
  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

  // FNV-1a of the canonical JSON form, hex encoded.
  std::string hash() const;

  // Records a merge of two existing symbols; returns the id of the result.
  TokenId add_merge(TokenId left, TokenId right);
  void add_special(const std::string& token);

 private:
  void encode_plain(std::string_view text, std::vector<TokenId>& out) const;
  void bpe_chunk(std::string_view chunk, std::vector<TokenId>& out) const;

  std::vector<std::string> pieces_;  // id -> bytes
  std::vector<bool> special_flag_;
  std::vector<std::string> special_names_;
  std::unordered_map<std::string, TokenId> special_ids_;
  std::unordered_map<std::string, TokenId> symbol_ids_;  // non-special symbol bytes -> id
  std::vector<std::pair<TokenId, TokenId>> merges_;
  std::map<std::pair<TokenId, TokenId>, std::pair<std::size_t, TokenId>> merge_rank_;
  std::string special_first_chars_;
};

Vocab train_bpe(const std::vector<std::string>& texts, std::size_t target_vocab_size,
                const std::vector<std::string>& extra_specials = {});

Vocab add_special_tokens(const Vocab& vocab, const std::vector<std::string>& tokens);

// Role ids double as segment ids.
struct TokenSequence {
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> segments;

  std::size_t size() const noexcept { return ids.size(); }
  void push(TokenId id, Role role) {
    ids.push_back(id);
    segments.push_back(static_cast<std::uint8_t>(role));
  }
};

// `<bos>`, then per span its role token followed by the encoded span text,
// then a trailing `<system>` prompt at which the reply starts.
TokenSequence encode_context(const Vocab& vocab, const ContextText& ctx);

// Reply tokens followed by `<eos>`, all on the system segment.
void append_reply(TokenSequence& seq, std::span<const TokenId> reply);

}  // namespace tod
