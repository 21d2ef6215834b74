#include "context_codec.hpp"

#include <algorithm>
#include <set>

#include "common.hpp"
#include "corpus.hpp"

namespace tod {

BeliefState canonicalize(const BeliefState& belief) {
  BeliefState out;
  for (const auto& [domain, slots] : belief) {
    if (!slots.empty()) out.emplace(domain, slots);
  }
  return out;
}

std::string serialize_belief(const BeliefState& belief) {
  std::string out;
  for (const auto& [domain, slots] : belief) {
    if (slots.empty()) continue;
    if (!out.empty()) out += ' ';
    out += domain;
    for (const auto& [slot, value] : slots) {
      out += ' ';
      out += slot;
      out += ' ';
      out += value;
    }
  }
  return out;
}

std::string serialize_db(const DbState& db) {
  std::string out;
  for (const auto& [domain, count] : db) {
    if (!out.empty()) out += ' ';
    out += domain;
    out += ' ';
    out += std::to_string(count);
  }
  return out;
}

namespace {

struct Word {
  std::string text;
  std::size_t offset;
};

std::vector<Word> split_words(const std::string& text) {
  std::vector<Word> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == ' ') ++i;
    if (i >= text.size()) break;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    words.push_back({text.substr(i, j - i), i});
    i = j;
  }
  return words;
}

[[noreturn]] void parse_fail(const Word& w, const std::string& what) {
  throw Error(ErrorCode::parse, "belief parse error at offset " +
                                    std::to_string(w.offset) + ": '" + w.text +
                                    "' " + what);
}

}  // namespace

BeliefState parse_belief(const std::string& text, const Database& schema) {
  const auto words = split_words(text);
  BeliefState out;
  std::size_t i = 0;
  while (i < words.size()) {
    const Word& dw = words[i];
    auto dom = schema.schema.find(dw.text);
    if (dom == schema.schema.end()) parse_fail(dw, "is not a domain");
    const std::set<std::string> slots(dom->second.begin(), dom->second.end());
    auto& block = out[dw.text];
    ++i;
    if (i >= words.size()) parse_fail(dw, "has no slots");
    while (i < words.size() && !schema.schema.contains(words[i].text)) {
      const Word& sw = words[i];
      if (!slots.contains(sw.text)) parse_fail(sw, "is not a slot of " + dw.text);
      ++i;
      // A value runs until the next slot of this domain or the next domain.
      std::string value;
      while (i < words.size() && !slots.contains(words[i].text) &&
             !schema.schema.contains(words[i].text)) {
        if (!value.empty()) value += ' ';
        value += words[i].text;
        ++i;
      }
      if (value.empty()) parse_fail(sw, "has no value");
      block[sw.text] = value;
    }
    if (block.empty()) parse_fail(dw, "has no slots");
  }
  return out;
}

ContextText build_context(const std::vector<Utterance>& history,
                          const BeliefState& belief, const DbState& db,
                          int window) {
  if (history.empty()) throw Error(ErrorCode::contract, "context history is empty");
  if (history.back().speaker != Speaker::user)
    throw Error(ErrorCode::contract, "context history must end with a user turn");
  if (window < 1) throw Error(ErrorCode::contract, "history window must be >= 1");

  ContextText ctx;
  auto append = [&ctx](Role role, const std::string& piece) {
    if (piece.empty()) return;
    const std::size_t begin = ctx.text.size();
    if (!ctx.text.empty()) ctx.text += ' ';
    ctx.text += piece;
    ctx.spans.push_back({role, begin, ctx.text.size()});
  };

  const std::size_t first =
      history.size() > static_cast<std::size_t>(window) ? history.size() - window : 0;
  for (std::size_t i = first; i < history.size(); ++i) {
    append(history[i].speaker == Speaker::user ? Role::user : Role::system,
           history[i].text);
  }
  append(Role::system, serialize_belief(belief));
  append(Role::system, serialize_db(db));
  return ctx;
}

}  // namespace tod
