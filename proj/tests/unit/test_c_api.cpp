// Exercises the shared library through its C header only.
#include <tod/tod.h>
#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"

using nlohmann::json;

namespace {

struct Scratch {
  std::filesystem::path path = std::filesystem::temp_directory_path() /
                               ("tod_capi_" + std::to_string(::getpid()));
  Scratch() { std::filesystem::create_directories(path); }
  ~Scratch() { std::filesystem::remove_all(path); }
  std::string file(const char* name) const { return (path / name).string(); }
};

json take(char* s) {
  REQUIRE(s != nullptr);
  json j = json::parse(s);
  tod_string_free(s);
  return j;
}

void on_epoch(const char* line, void* user) {
  static_cast<std::vector<json>*>(user)->push_back(json::parse(line));
}

}  // namespace

TEST_CASE("status names and errors") {
  CHECK(std::string(tod_version()).size() > 0);
  CHECK(std::string(tod_status_name(TOD_OK)) == "ok");
  CHECK(std::string(tod_status_name(TOD_ERR_HASH_MISMATCH)) == "hash_mismatch");

  tod_corpus* c = nullptr;
  CHECK(tod_corpus_load("/nonexistent/corpus.json", &c) == TOD_ERR_IO);
  CHECK(c == nullptr);
  CHECK(std::string(tod_last_error()).find("/nonexistent/corpus.json") != std::string::npos);
  CHECK(tod_corpus_synthesize(1, 5, "{not json", &c) == TOD_ERR_PARSE);
  CHECK(tod_corpus_synthesize(1, 5, nullptr, nullptr) == TOD_ERR_INVALID_ARGUMENT);
  CHECK(tod_judge_export("/nonexistent/store.jsonl", nullptr) == TOD_ERR_INVALID_ARGUMENT);
}

TEST_CASE("pipeline through the C interface") {
  Scratch dir;
  tod_corpus* corpus = nullptr;
  REQUIRE(tod_corpus_synthesize(2, 20, nullptr, &corpus) == TOD_OK);
  CHECK(tod_corpus_size(corpus) == 20);
  REQUIRE(tod_corpus_save(corpus, dir.file("c.json").c_str()) == TOD_OK);

  tod_corpus *train = nullptr, *dev = nullptr, *test = nullptr;
  REQUIRE(tod_corpus_split(corpus, 0.8, 0.1, 0.1, 3, &train, &dev, &test) == TOD_OK);
  CHECK(tod_corpus_size(train) == 16);
  tod_corpus *t2 = nullptr, *d2 = nullptr, *e2 = nullptr;
  CHECK(tod_corpus_split(corpus, 0.8, 0.8, 0.1, 3, &t2, &d2, &e2) == TOD_ERR_INVALID_ARGUMENT);
  CHECK(t2 == nullptr);

  tod_vocab* vocab = nullptr;
  REQUIRE(tod_vocab_train(corpus, 300, &vocab) == TOD_OK);
  CHECK(tod_vocab_size(vocab) <= 300);
  REQUIRE(tod_vocab_save(vocab, dir.file("v.json").c_str()) == TOD_OK);

  std::vector<json> epochs;
  tod_model* model = nullptr;
  const char* tcfg = R"({"epochs": 2, "batch_size": 8, "learning_rate": 0.003, "seed": 1})";
  const char* mcfg = R"({"n_layers": 1, "n_heads": 2, "d_model": 16, "d_ff": 32, "context_limit": 128})";
  REQUIRE(tod_train(train, dev, vocab, tcfg, mcfg, nullptr, on_epoch, &epochs, &model) == TOD_OK);
  CHECK(epochs.size() == 2);
  CHECK(epochs[0].contains("dev_accuracy"));
  tod_model* rejected = nullptr;
  CHECK(tod_train(train, dev, vocab, R"({"batch_size": 0})", mcfg, nullptr, nullptr, nullptr, &rejected) ==
        TOD_ERR_CONFIG);
  CHECK(rejected == nullptr);

  char* info = nullptr;
  REQUIRE(tod_model_info(model, &info) == TOD_OK);
  const json i = take(info);
  CHECK(i["config"]["vocab_size"] == tod_vocab_size(vocab));
  CHECK(i["parameters"].get<long>() > 0);

  REQUIRE(tod_model_save(model, dir.file("m.ckpt").c_str()) == TOD_OK);
  tod_model* loaded = nullptr;
  REQUIRE(tod_model_load(dir.file("m.ckpt").c_str(), vocab, &loaded) == TOD_OK);

  tod_vocab* other = nullptr;
  REQUIRE(tod_vocab_train(corpus, 290, &other) == TOD_OK);
  tod_model* mismatched = nullptr;
  CHECK(tod_model_load(dir.file("m.ckpt").c_str(), other, &mismatched) == TOD_ERR_HASH_MISMATCH);

  const char* request = R"({"context":[{"speaker":"user","text":"i want a cheap hotel"}],
                            "belief":{"hotel":{"pricerange":"cheap"}},"db":{"hotel":3},
                            "policy":{"max_new_tokens":6}})";
  char *r1 = nullptr, *r2 = nullptr;
  REQUIRE(tod_generate(model, vocab, request, &r1) == TOD_OK);
  REQUIRE(tod_generate(loaded, vocab, request, &r2) == TOD_OK);
  CHECK(take(r1) == take(r2));
  char* bad = nullptr;
  CHECK(tod_generate(model, vocab, R"({"context": 3})", &bad) == TOD_ERR_VALIDATION);
  CHECK(bad == nullptr);

  char *report = nullptr, *table = nullptr;
  REQUIRE(tod_evaluate(nullptr, vocab, test, nullptr, &report, &table) == TOD_OK);
  const json gold = take(report);
  CHECK(gold["inform"] == 100.0);
  CHECK(std::string(table).find("Inform (%)") != std::string::npos);
  tod_string_free(table);
  REQUIRE(tod_evaluate(model, vocab, test, R"({"max_new_tokens": 4})", &report, nullptr) == TOD_OK);
  CHECK(take(report)["source"] == "model");

  tod_model_free(model);
  tod_model_free(loaded);
  tod_vocab_free(vocab);
  tod_vocab_free(other);
  tod_corpus_free(train);
  tod_corpus_free(dev);
  tod_corpus_free(test);
  tod_corpus_free(corpus);
}

TEST_CASE("judge export reads a store") {
  Scratch dir;
  const auto store = dir.file("s.jsonl");
  {
    std::FILE* f = std::fopen(store.c_str(), "w");
    std::fputs(R"({"kind":"sources","tags":["a","b"],"contexts":2})" "\n"
               R"({"kind":"pair","pair_id":"p000001","judge":"j","source_a":"b","source_b":"a","context":0,"swapped":true})" "\n"
               R"({"kind":"judgment","pair_id":"p000001","judge":"j","choice":"A","timestamp":"t"})" "\n",
               f);
    std::fclose(f);
  }
  char* out = nullptr;
  REQUIRE(tod_judge_export(store.c_str(), &out) == TOD_OK);
  const json agg = take(out);
  CHECK(agg["rows"][0]["row"] == "a | 0% | 100% | b");
}
