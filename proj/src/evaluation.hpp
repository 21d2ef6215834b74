#pragma once

#include <map>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "decoding.hpp"
#include "json.hpp"
#include "model.hpp"
#include "tokenizer.hpp"

namespace tod {

using Tokens = std::vector<std::string>;

// Whitespace tokenization used for BLEU.
Tokens bleu_tokens(const std::string& text);

// Corpus BLEU-4 in [0, 1]: clipped n-gram precisions pooled over the corpus,
// uniform geometric mean, brevity penalty exp(1 - r/c) when c < r. Orders for
// which the hypotheses hold no n-grams at all are left out of the mean; any
// other order without a match gives 0.
double bleu(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references);

struct DialogueScore {
  std::string id;
  bool inform = false;
  bool success = false;
};

struct InformSuccess {
  double inform = 0.0;   // fraction
  double success = 0.0;  // fraction
  std::vector<DialogueScore> dialogues;
};

// `generated` maps dialogue id to its delexicalized system responses.
InformSuccess inform_success(const std::map<std::string, std::vector<std::string>>& generated,
                             const std::map<std::string, Goal>& goals, const Database& db);

struct TurnOutput {
  std::string dialogue_id;
  std::size_t turn = 0;
  std::string reference;
  std::string hypothesis;
};

struct EvalReport {
  double inform = 0.0;   // percent
  double success = 0.0;  // percent
  double bleu = 0.0;     // percent
  std::string source;    // "model" or "gold"
  nlohmann::json policy;
  std::vector<DialogueScore> dialogues;
  std::vector<TurnOutput> turns;

  nlohmann::json to_json() const;
  std::string table() const;
};

// With `params` == nullptr the gold responses stand in for the model.
// Contexts come from the gold history and the oracle belief and db state.
EvalReport evaluate(const Params<float>* params, const Vocab* vocab, const Corpus& test,
                    const DecodePolicy& policy, int history_window = kDefaultHistoryWindow);

}  // namespace tod
