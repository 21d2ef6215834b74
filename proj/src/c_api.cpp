#include <tod/tod.h>

#include <cstdlib>
#include <cstring>
#include <string>

#include "corpus.hpp"
#include "evaluation.hpp"
#include "service.hpp"
#include "training.hpp"

struct tod_corpus {
  tod::Corpus corpus;
};
struct tod_vocab {
  tod::Vocab vocab;
};
struct tod_model {
  tod::Checkpoint checkpoint;
};

namespace {

using nlohmann::json;

thread_local std::string last_error;

tod_status status_of(tod::ErrorCode code) { return static_cast<tod_status>(static_cast<int>(code)); }

template <typename F>
tod_status guarded(F&& f) {
  try {
    f();
    last_error.clear();
    return TOD_OK;
  } catch (const tod::Error& e) {
    last_error = e.what();
    return status_of(e.code());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return TOD_ERR_UNKNOWN;
  } catch (const std::exception& e) {
    last_error = e.what();
    return TOD_ERR_UNKNOWN;
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw tod::Error(tod::ErrorCode::invalid_argument, what);
}

json parse_json(const char* text, const char* what) {
  if (!text) return json::object();
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw tod::Error(tod::ErrorCode::parse, std::string(what) + ": " + e.what());
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

}  // namespace

extern "C" {

const char* tod_version(void) { return tod::library_version().data(); }

const char* tod_last_error(void) { return last_error.c_str(); }

const char* tod_status_name(tod_status status) {
  if (status == TOD_OK) return "ok";
  if (status == TOD_ERR_UNKNOWN) return "unknown";
  if (status < TOD_ERR_INVALID_ARGUMENT || status > TOD_ERR_IO) return "invalid_status";
  return tod::error_code_name(static_cast<tod::ErrorCode>(status)).data();
}

void tod_string_free(char* s) { std::free(s); }

tod_status tod_corpus_synthesize(uint64_t seed, int n_dialogues, const char* config_json,
                                 tod_corpus** out) {
  return guarded([&] {
    require(out != nullptr, "out is NULL");
    const auto cfg = config_json ? tod::SynthConfig::from_json(parse_json(config_json, "synth config"))
                                 : tod::SynthConfig::defaults();
    *out = new tod_corpus{tod::synthesize_corpus(seed, n_dialogues, cfg)};
  });
}

tod_status tod_corpus_load(const char* path, tod_corpus** out) {
  return guarded([&] {
    require(path && out, "path or out is NULL");
    *out = new tod_corpus{tod::load_corpus(path)};
  });
}

tod_status tod_corpus_save(const tod_corpus* corpus, const char* path) {
  return guarded([&] {
    require(corpus && path, "corpus or path is NULL");
    tod::save_corpus(corpus->corpus, path);
  });
}

tod_status tod_corpus_split(const tod_corpus* corpus, double train, double dev, double test,
                            uint64_t seed, tod_corpus** train_out, tod_corpus** dev_out,
                            tod_corpus** test_out) {
  return guarded([&] {
    require(corpus && train_out && dev_out && test_out, "NULL argument");
    auto s = tod::split(corpus->corpus, {train, dev, test}, seed);
    *train_out = new tod_corpus{std::move(s.train)};
    *dev_out = new tod_corpus{std::move(s.dev)};
    *test_out = new tod_corpus{std::move(s.test)};
  });
}

size_t tod_corpus_size(const tod_corpus* corpus) { return corpus ? corpus->corpus.dialogues.size() : 0; }

void tod_corpus_free(tod_corpus* corpus) { delete corpus; }

tod_status tod_vocab_train(const tod_corpus* corpus, size_t target_size, tod_vocab** out) {
  return guarded([&] {
    require(corpus && out, "corpus or out is NULL");
    *out = new tod_vocab{tod::train_bpe(tod::tokenizer_texts(corpus->corpus), target_size,
                                        tod::schema_placeholders(corpus->corpus.db))};
  });
}

tod_status tod_vocab_load(const char* path, tod_vocab** out) {
  return guarded([&] {
    require(path && out, "path or out is NULL");
    *out = new tod_vocab{tod::Vocab::load(path)};
  });
}

tod_status tod_vocab_save(const tod_vocab* vocab, const char* path) {
  return guarded([&] {
    require(vocab && path, "vocab or path is NULL");
    vocab->vocab.save(path);
  });
}

size_t tod_vocab_size(const tod_vocab* vocab) { return vocab ? vocab->vocab.size() : 0; }

void tod_vocab_free(tod_vocab* vocab) { delete vocab; }

tod_status tod_train(const tod_corpus* train, const tod_corpus* dev, const tod_vocab* vocab,
                     const char* train_config_json, const char* model_config_json,
                     const tod_model* init, tod_log_fn log, void* user, tod_model** out) {
  return guarded([&] {
    require(train && dev && vocab && out, "NULL argument");
    const auto tcfg = tod::TrainConfig::from_json(parse_json(train_config_json, "train config"));
    tod::ModelConfig mcfg;
    if (init) {
      mcfg = init->checkpoint.config;
      if (init->checkpoint.vocab_hash != vocab->vocab.hash())
        throw tod::Error(tod::ErrorCode::hash_mismatch, "initial model was trained with another vocab");
    } else {
      json mj = parse_json(model_config_json, "model config");
      if (!mj.contains("vocab_size")) mj["vocab_size"] = vocab->vocab.size();
      mcfg = tod::ModelConfig::from_json(mj);
    }
    tod::TrainLogger logger;
    if (log)
      logger = [&](const tod::EpochStats& e) {
        json j{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"seconds", e.seconds}};
        if (!std::isnan(e.dev_perplexity)) j["dev_perplexity"] = e.dev_perplexity;
        if (!std::isnan(e.dev_accuracy)) j["dev_accuracy"] = e.dev_accuracy;
        log(j.dump().c_str(), user);
      };
    auto result = tod::train(train->corpus, dev->corpus, vocab->vocab, tcfg, mcfg, logger,
                             init ? &init->checkpoint.params : nullptr);
    *out = new tod_model{std::move(result.checkpoint)};
  });
}

tod_status tod_model_load(const char* path, const tod_vocab* vocab, tod_model** out) {
  return guarded([&] {
    require(path && out, "path or out is NULL");
    std::optional<std::string> hash;
    if (vocab) hash = vocab->vocab.hash();
    *out = new tod_model{tod::load_checkpoint(path, hash)};
  });
}

tod_status tod_model_save(const tod_model* model, const char* path) {
  return guarded([&] {
    require(model && path, "model or path is NULL");
    tod::save_checkpoint(model->checkpoint, path);
  });
}

tod_status tod_model_info(const tod_model* model, char** info_json) {
  return guarded([&] {
    require(model && info_json, "model or info_json is NULL");
    const auto& c = model->checkpoint;
    json info{{"config", c.config.to_json()},
              {"vocab_hash", c.vocab_hash},
              {"step", c.step},
              {"parameters", c.params.parameter_count()},
              {"metadata", c.metadata}};
    *info_json = dup_string(info.dump());
  });
}

void tod_model_free(tod_model* model) { delete model; }

namespace {

void check_pair(const tod_model* model, const tod_vocab* vocab) {
  require(model && vocab, "model or vocab is NULL");
  if (model->checkpoint.vocab_hash != vocab->vocab.hash())
    throw tod::Error(tod::ErrorCode::hash_mismatch, "model was trained with another vocab");
}

}  // namespace

tod_status tod_generate(const tod_model* model, const tod_vocab* vocab, const char* request_json,
                        char** response_json) {
  return guarded([&] {
    check_pair(model, vocab);
    require(request_json && response_json, "request or response is NULL");
    const auto req = tod::parse_generate_request(parse_json(request_json, "generation request"));
    const auto ctx = tod::build_context(req.history, req.belief, req.db);
    const auto gen = tod::generate(model->checkpoint.params, vocab->vocab, ctx, req.policy);
    *response_json = dup_string(tod::generation_to_json(gen).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace));
  });
}

tod_status tod_evaluate(const tod_model* model, const tod_vocab* vocab, const tod_corpus* test,
                        const char* policy_json, char** report_json, char** table) {
  return guarded([&] {
    require(test && report_json, "test or report_json is NULL");
    if (model) check_pair(model, vocab);
    const auto policy = tod::DecodePolicy::from_json(parse_json(policy_json, "decode policy"));
    const auto report = tod::evaluate(model ? &model->checkpoint.params : nullptr,
                                      vocab ? &vocab->vocab : nullptr, test->corpus, policy);
    *report_json = dup_string(report.to_json().dump(-1, ' ', false, nlohmann::json::error_handler_t::replace));
    if (table) *table = dup_string(report.table());
  });
}

tod_status tod_serve(const char* config_json) {
  return guarded([&] {
    tod::serve(tod::ServiceConfig::from_json(parse_json(config_json, "service config")));
  });
}

tod_status tod_judge_export(const char* store_path, char** aggregate_json) {
  return guarded([&] {
    require(store_path && aggregate_json, "NULL argument");
    *aggregate_json = dup_string(tod::aggregate_store(store_path).to_json().dump());
  });
}

}  // extern "C"
