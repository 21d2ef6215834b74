#include <algorithm>
#include <fstream>
#include <set>

#include "corpus.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace tod;

namespace {

Database toy_db() {
  Database db;
  db.schema["restaurant"] = {"name", "area", "food", "phone"};
  db.entities["restaurant"] = {
      {{"name", "pizza hut"}, {"area", "north"}, {"food", "italian"}, {"phone", "01223 111"}},
      {{"name", "pizza hut city"}, {"area", "centre"}, {"food", "italian"}, {"phone", "01223 222"}},
  };
  return db;
}

}  // namespace

TEST_CASE("placeholder format") {
  CHECK(placeholder("hotel", "phone") == "[hotel_phone]");
  CHECK(find_placeholders("call [hotel_phone] or [x] [a_b]") ==
        std::vector<std::string>{"[hotel_phone]", "[a_b]"});
}

TEST_CASE("delexicalize replaces the longest value first") {
  const auto db = toy_db();
  const auto d = delexicalize("try pizza hut city in the centre", db, {});
  CHECK(d.text == "try [restaurant_name] in the [restaurant_area]");
  CHECK(d.slot_map.at("[restaurant_name]") == "pizza hut city");
  CHECK(relexicalize(d.text, d.slot_map) == "try pizza hut city in the centre");
}

TEST_CASE("delexicalize respects word boundaries") {
  const auto db = toy_db();
  const auto d = delexicalize("the northern part is not north", db, {});
  CHECK(d.text == "the northern part is not [restaurant_area]");
}

TEST_CASE("belief values win over database values of equal length") {
  Database db = toy_db();
  db.schema["hotel"] = {"name", "area"};
  db.entities["hotel"] = {{{"name", "acorn"}, {"area", "north"}}};
  BeliefState belief{{"hotel", {{"area", "north"}}}};
  const auto d = delexicalize("somewhere north", db, belief);
  CHECK(d.text == "somewhere [hotel_area]");
}

TEST_CASE("relexicalize rejects unknown placeholders") {
  CHECK_THROWS_AS(relexicalize("call [hotel_phone]", {}), Error);
  try {
    relexicalize("call [hotel_phone]", {});
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::not_found);
  }
}

TEST_CASE("delexicalize round trip on random texts") {
  const auto corpus = synthesize_corpus(11, 30);
  std::mt19937_64 rng(5);
  std::vector<std::string> values, filler = {"the", "a", "near", "with", ",", ".", "ok"};
  for (const auto& [domain, records] : corpus.db.entities)
    for (const auto& r : records)
      for (const auto& [attr, v] : r) values.push_back(v);
  for (int i = 0; i < 500; ++i) {
    std::string text;
    const int n = 1 + static_cast<int>(rng() % 12);
    for (int w = 0; w < n; ++w) {
      if (!text.empty()) text += ' ';
      text += rng() % 3 == 0 ? values[rng() % values.size()] : filler[rng() % filler.size()];
    }
    const auto d = delexicalize(text, corpus.db, {});
    CHECK(relexicalize(d.text, d.slot_map) == text);
  }
}

TEST_CASE("synthetic corpus is deterministic and valid") {
  const auto a = synthesize_corpus(7, 40);
  const auto b = synthesize_corpus(7, 40);
  CHECK(corpus_to_json(a) == corpus_to_json(b));
  CHECK(corpus_to_json(a) != corpus_to_json(synthesize_corpus(8, 40)));
  REQUIRE(a.dialogues.size() == 40);
  CHECK_NOTHROW(validate(a));
  CHECK(a.dialogues.front().id == "synth-00000");
  for (const auto& d : a.dialogues) {
    REQUIRE(a.goals.contains(d.id));
    CHECK(d.turns.size() % 2 == 0);
    // every requested attribute is answered with a placeholder in some gold turn
    std::set<std::string> seen;
    for (const auto& t : d.turns)
      for (const auto& ph : find_placeholders(t.delex_text)) seen.insert(ph);
    for (const auto& [domain, attrs] : a.goals.at(d.id).requested)
      for (const auto& attr : attrs) CHECK(seen.contains(placeholder(domain, attr)));
  }
}

TEST_CASE("synthetic db counts agree with the database") {
  const auto c = synthesize_corpus(3, 30);
  for (const auto& d : c.dialogues)
    for (const auto& t : d.turns)
      if (t.speaker == Speaker::system) CHECK(t.db_state == c.db.db_state(t.belief));
}

TEST_CASE("synth config validation") {
  auto cfg = SynthConfig::defaults();
  cfg.domains[0].n_entities = 3;
  CHECK_THROWS_AS(synthesize_corpus(1, 5, cfg), Error);
  cfg = SynthConfig::defaults();
  cfg.domains[0].informable.erase(cfg.domains[0].informable.begin(),
                                  std::next(cfg.domains[0].informable.begin(), 2));
  CHECK_THROWS_AS(synthesize_corpus(1, 5, cfg), Error);
}

TEST_CASE("corpus JSON round trip") {
  testing::TempDir dir;
  const auto c = synthesize_corpus(2, 15);
  save_corpus(c, dir.file("c.json"));
  const auto back = load_corpus(dir.file("c.json"));
  CHECK(corpus_to_json(back) == corpus_to_json(c));
}

TEST_CASE("ingest normalizes text and computes missing delexicalization") {
  const nlohmann::json doc = {
      {"database",
       {{"schema", {{"restaurant", {"name", "area", "phone"}}}},
        {"entities", {{"restaurant", {{{"name", "Pizza Hut"}, {"area", "north"}, {"phone", "123"}}}}}}}},
      {"dialogues",
       {{{"id", "d1"},
         {"turns",
          {{{"speaker", "user"}, {"text", "I  want food in the NORTH"}},
           {{"speaker", "system"},
            {"text", "Pizza Hut is in the north , call 123"},
            {"belief", {{"restaurant", {{"area", "north"}}}}},
            {"db_counts", {{"restaurant", 1}}}}}}}}},
      {"goals", {{"d1", {{"constraints", {{"restaurant", {{"area", "north"}}}}}, {"requested", {{"restaurant", {"phone"}}}}}}}}};
  const auto c = corpus_from_json(doc);
  CHECK(c.dialogues[0].turns[0].text == "i want food in the north");
  CHECK(c.dialogues[0].turns[1].delex_text ==
        "[restaurant_name] is in the [restaurant_area] , call [restaurant_phone]");
}

TEST_CASE("validation errors name the dialogue and turn") {
  nlohmann::json doc = corpus_to_json(synthesize_corpus(1, 3));
  doc["dialogues"][1]["turns"][1].erase("belief");
  try {
    corpus_from_json(doc);
    FAIL("expected a validation error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::validation);
    CHECK(std::string(e.what()).find("synth-00001") != std::string::npos);
    CHECK(std::string(e.what()).find("turn 1") != std::string::npos);
  }
}

TEST_CASE("load_corpus reports parse position") {
  testing::TempDir dir;
  std::ofstream(dir.file("bad.json")) << "{\n  \"dialogues\": [,]\n}";
  try {
    load_corpus(dir.file("bad.json"));
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::parse);
    CHECK(std::string(e.what()).find("bad.json:2:") != std::string::npos);
  }
}

TEST_CASE("split partitions the corpus deterministically") {
  const auto c = synthesize_corpus(7, 200);
  const auto s = split(c, {}, 7);
  CHECK(s.train.dialogues.size() == 160);
  CHECK(s.dev.dialogues.size() == 20);
  CHECK(s.test.dialogues.size() == 20);
  std::set<std::string> ids;
  for (const Corpus* part : {&s.train, &s.dev, &s.test})
    for (const auto& d : part->dialogues) {
      CHECK(ids.insert(d.id).second);
      CHECK(part->goals.contains(d.id));
    }
  CHECK(ids.size() == 200);
  CHECK(corpus_to_json(split(c, {}, 7).test) == corpus_to_json(s.test));
  CHECK_THROWS_AS(split(c, {0.5, 0.2, 0.2}, 7), Error);
}
