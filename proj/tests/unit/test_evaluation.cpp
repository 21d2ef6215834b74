#include <algorithm>
#include <random>

#include "bleu_oracle.hpp"
#include "doctest.h"
#include "evaluation.hpp"
#include "helpers.hpp"

using namespace tod;

namespace {

std::vector<Tokens> random_corpus(std::mt19937_64& rng, std::size_t n, std::size_t vocab) {
  std::vector<Tokens> out(n);
  for (auto& s : out) {
    const std::size_t len = rng() % 12;
    for (std::size_t i = 0; i < len; ++i) s.push_back("w" + std::to_string(rng() % vocab));
  }
  return out;
}

Database hotel_db() {
  Database db;
  db.schema["hotel"] = {"name", "area", "phone"};
  db.schema["taxi"] = {"car", "phone"};
  db.entities["hotel"] = {{{"name", "acorn"}, {"area", "north"}, {"phone", "1"}}};
  return db;
}

}  // namespace

TEST_CASE("bleu on hand examples") {
  const auto t = [](const std::string& s) { return bleu_tokens(s); };
  CHECK(bleu({t("the cat sat on the mat")}, {t("the cat sat on the mat")}) == doctest::Approx(1.0));
  // precisions 5/6, 3/5, 2/4, 1/3
  CHECK(bleu({t("the cat sat on a mat")}, {t("the cat sat on the mat")}) ==
        doctest::Approx(std::pow(1.0 / 12.0, 0.25)).epsilon(1e-12));
  // "a" is clipped to one match; no trigrams or 4-grams exist, so only two
  // orders enter the mean: sqrt(3/4 * 1/2)
  CHECK(bleu({t("a a"), t("c d")}, {t("a b"), t("c d")}) ==
        doctest::Approx(std::sqrt(0.375)).epsilon(1e-12));
  CHECK(bleu({t("")}, {t("a b c")}) == 0.0);
  CHECK(bleu({t("x y z w")}, {t("a b c d")}) == 0.0);
  CHECK_THROWS_AS(bleu({t("a")}, {}), Error);
}

TEST_CASE("bleu agrees with the direct formula") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = 1 + rng() % 6;
    const auto refs = random_corpus(rng, n, 4 + rng() % 5);
    auto hyps = random_corpus(rng, n, 4 + rng() % 5);
    if (rng() % 3 == 0) hyps = refs;
    CHECK(std::abs(bleu(hyps, refs) - testing::bleu_oracle(hyps, refs)) < 1e-9);
  }
}

TEST_CASE("inform and success") {
  const auto db = hotel_db();
  Goal g;
  g.constraints["hotel"] = {{"area", "north"}};
  g.requested["hotel"] = {"phone"};
  const std::map<std::string, Goal> goals{{"d", g}};

  auto score = [&](std::vector<std::string> r) { return inform_success({{"d", r}}, goals, db); };
  CHECK(score({"[hotel_name] is nice", "call [hotel_phone]"}).success == 1.0);
  CHECK(score({"[hotel_name] is nice"}).inform == 1.0);
  CHECK(score({"[hotel_name] is nice"}).success == 0.0);
  CHECK(score({"call [hotel_phone]"}).inform == 0.0);
  CHECK(score({"call [hotel_phone]"}).success == 0.0);

  Goal none = g;
  none.constraints["hotel"] = {{"area", "south"}};
  const auto r = inform_success({{"d", {"[hotel_name] [hotel_phone]"}}}, {{"d", none}}, db);
  CHECK(r.inform == 0.0);

  Goal vacuous;
  vacuous.constraints["taxi"] = {};
  CHECK(inform_success({{"d", {"ok"}}}, {{"d", vacuous}}, db).success == 1.0);

  CHECK_THROWS_AS(inform_success({{"missing", {}}}, goals, db), Error);
}

TEST_CASE("success never exceeds inform") {
  const auto corpus = synthesize_corpus(12, 30);
  std::vector<std::string> phs = schema_placeholders(corpus.db);
  phs.push_back("the");
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::map<std::string, std::vector<std::string>> gen;
    for (const auto& d : corpus.dialogues) {
      auto& rs = gen[d.id];
      for (std::size_t k = rng() % 4; k > 0; --k) {
        std::string s;
        for (std::size_t w = rng() % 5; w > 0; --w) s += phs[rng() % phs.size()] + " ";
        rs.push_back(s);
      }
    }
    const auto r = inform_success(gen, corpus.goals, corpus.db);
    CHECK(r.success <= r.inform);
    for (const auto& d : r.dialogues) CHECK((!d.success || d.inform));
  }
}

TEST_CASE("gold responses score 100 on every metric") {
  const auto corpus = synthesize_corpus(7, 25);
  const auto report = evaluate(nullptr, nullptr, corpus, DecodePolicy{});
  CHECK(report.inform == 100.0);
  CHECK(report.success == 100.0);
  CHECK(report.bleu == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(report.source == "gold");
  const auto table = report.table();
  CHECK(table.find("Inform (%)") != std::string::npos);
  CHECK(table.find("Success (%)") != std::string::npos);
  CHECK(table.find("BLEU (%)") != std::string::npos);
  CHECK(table.find("gold") != std::string::npos);
  CHECK(report.to_json()["turns"].size() == report.turns.size());
}

TEST_CASE("model evaluation is deterministic") {
  const auto corpus = synthesize_corpus(7, 4);
  const Vocab vocab = testing::small_vocab(corpus, 300);
  const auto params = init_model<float>(testing::tiny_config(vocab.size(), 1, 16));
  DecodePolicy policy;
  policy.max_new_tokens = 8;
  const auto a = evaluate(&params, &vocab, corpus, policy);
  const auto b = evaluate(&params, &vocab, corpus, policy);
  CHECK(a.to_json() == b.to_json());
  CHECK(a.success <= a.inform);
  CHECK(a.table().find("greedy") != std::string::npos);
  CHECK_THROWS_AS(evaluate(&params, nullptr, corpus, policy), Error);
}
