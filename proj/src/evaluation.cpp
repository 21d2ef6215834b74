#include "evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "training.hpp"

namespace tod {

using nlohmann::json;

Tokens bleu_tokens(const std::string& text) {
  Tokens out;
  std::istringstream in(text);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

namespace {

std::map<Tokens, int> ngram_counts(const Tokens& words, std::size_t n) {
  std::map<Tokens, int> counts;
  for (std::size_t i = 0; i + n <= words.size(); ++i)
    ++counts[Tokens(words.begin() + static_cast<long>(i), words.begin() + static_cast<long>(i + n))];
  return counts;
}

}  // namespace

double bleu(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references) {
  if (hypotheses.size() != references.size())
    throw Error(ErrorCode::invalid_argument, "bleu: " + std::to_string(hypotheses.size()) +
                                                 " hypotheses vs " +
                                                 std::to_string(references.size()) + " references");
  if (references.empty()) throw Error(ErrorCode::invalid_argument, "bleu: empty corpus");

  constexpr std::size_t kMaxOrder = 4;
  std::size_t c = 0, r = 0;
  std::size_t matches[kMaxOrder] = {};
  std::size_t totals[kMaxOrder] = {};
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    c += hypotheses[s].size();
    r += references[s].size();
    for (std::size_t n = 1; n <= kMaxOrder; ++n) {
      const auto hyp = ngram_counts(hypotheses[s], n);
      const auto ref = ngram_counts(references[s], n);
      for (const auto& [gram, count] : hyp) {
        totals[n - 1] += static_cast<std::size_t>(count);
        const auto it = ref.find(gram);
        if (it != ref.end()) matches[n - 1] += static_cast<std::size_t>(std::min(count, it->second));
      }
    }
  }
  if (c == 0) return 0.0;

  double log_sum = 0.0;
  int orders = 0;
  for (std::size_t n = 0; n < kMaxOrder; ++n) {
    if (totals[n] == 0) continue;
    if (matches[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(matches[n]) / static_cast<double>(totals[n]));
    ++orders;
  }
  const double bp = c < r ? std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)) : 1.0;
  return bp * std::exp(log_sum / orders);
}

InformSuccess inform_success(const std::map<std::string, std::vector<std::string>>& generated,
                             const std::map<std::string, Goal>& goals, const Database& db) {
  InformSuccess out;
  for (const auto& [id, responses] : generated) {
    const auto git = goals.find(id);
    if (git == goals.end()) throw Error(ErrorCode::not_found, "no goal for dialogue '" + id + "'");
    const Goal& goal = git->second;

    std::set<std::string> seen;
    for (const auto& r : responses)
      for (auto& ph : find_placeholders(r)) seen.insert(std::move(ph));

    DialogueScore score{id, true, true};
    for (const auto& [domain, constraints] : goal.constraints) {
      if (constraints.empty()) continue;
      const bool offered = seen.contains(placeholder(domain, "name"));
      if (!offered || db.count_matches(domain, constraints) == 0) score.inform = false;
    }
    score.success = score.inform;
    for (const auto& [domain, attrs] : goal.requested)
      for (const auto& a : attrs)
        if (!seen.contains(placeholder(domain, a))) score.success = false;
    out.dialogues.push_back(score);
  }
  if (!out.dialogues.empty()) {
    std::size_t inf = 0, suc = 0;
    for (const auto& d : out.dialogues) {
      inf += d.inform;
      suc += d.success;
    }
    out.inform = static_cast<double>(inf) / static_cast<double>(out.dialogues.size());
    out.success = static_cast<double>(suc) / static_cast<double>(out.dialogues.size());
  }
  return out;
}

json EvalReport::to_json() const {
  json dl = json::array();
  for (const auto& d : dialogues)
    dl.push_back({{"id", d.id}, {"inform", d.inform}, {"success", d.success}});
  json tl = json::array();
  for (const auto& t : turns)
    tl.push_back({{"dialogue_id", t.dialogue_id},
                  {"turn", t.turn},
                  {"reference", t.reference},
                  {"hypothesis", t.hypothesis}});
  return {{"inform", inform}, {"success", success}, {"bleu", bleu},     {"source", source},
          {"policy", policy}, {"dialogues", dl},    {"turns", tl}};
}

std::string EvalReport::table() const {
  const std::string label = source == "gold" ? "gold" : policy.value("strategy", std::string("model"));
  char buf[160];
  std::string out;
  std::snprintf(buf, sizeof buf, "%-12s | %8s\n", "", label.c_str());
  out += buf;
  out += std::string(12, '-') + "-+-" + std::string(8, '-') + "\n";
  const std::pair<const char*, double> rows[] = {
      {"Inform (%)", inform}, {"Success (%)", success}, {"BLEU (%)", bleu}};
  for (const auto& [name, value] : rows) {
    std::snprintf(buf, sizeof buf, "%-12s | %8.2f\n", name, value);
    out += buf;
  }
  return out;
}

EvalReport evaluate(const Params<float>* params, const Vocab* vocab, const Corpus& test,
                    const DecodePolicy& policy, int history_window) {
  if (params && !vocab) throw Error(ErrorCode::invalid_argument, "evaluate: model without vocab");
  if (params && static_cast<std::size_t>(params->config.vocab_size) != vocab->size())
    throw Error(ErrorCode::hash_mismatch, "model and vocab sizes differ");
  policy.validate();

  EvalReport report;
  report.source = params ? "model" : "gold";
  report.policy = params ? policy.to_json() : json(nullptr);

  std::map<std::string, std::vector<std::string>> generated;
  std::vector<Tokens> hyps, refs;
  for (const auto& d : test.dialogues) {
    auto& responses = generated[d.id];
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      const Turn& turn = d.turns[t];
      if (turn.speaker != Speaker::system) continue;
      std::string hyp = turn.delex_text;
      if (params) {
        const auto ctx = build_context(history_before(d, t), turn.belief, turn.db_state,
                                       history_window);
        hyp = generate(*params, *vocab, ctx, policy).text;
      }
      responses.push_back(hyp);
      hyps.push_back(bleu_tokens(hyp));
      refs.push_back(bleu_tokens(turn.delex_text));
      report.turns.push_back({d.id, t, turn.delex_text, hyp});
    }
  }
  if (refs.empty()) throw Error(ErrorCode::validation, "test set has no system turns");

  const auto is = inform_success(generated, test.goals, test.db);
  report.inform = 100.0 * is.inform;
  report.success = 100.0 * is.success;
  report.bleu = 100.0 * bleu(hyps, refs);
  report.dialogues = is.dialogues;
  return report;
}

}  // namespace tod
