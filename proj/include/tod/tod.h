/* C interface to the tod dialogue toolkit.
 *
 * Every function returning tod_status leaves a thread-local message behind on
 * failure (tod_last_error). Strings returned through char** are owned by the
 * caller and released with tod_string_free. JSON arguments may be NULL where
 * noted, meaning "all defaults". */
#ifndef TOD_TOD_H
#define TOD_TOD_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define TOD_API __declspec(dllexport)
#else
#define TOD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tod_status {
  TOD_OK = 0,
  TOD_ERR_INVALID_ARGUMENT = 1,
  TOD_ERR_PARSE = 2,
  TOD_ERR_VALIDATION = 3,
  TOD_ERR_CONFIG = 4,
  TOD_ERR_CONTRACT = 5,
  TOD_ERR_NUMERIC = 6,
  TOD_ERR_FORMAT = 7,
  TOD_ERR_VERSION = 8,
  TOD_ERR_HASH_MISMATCH = 9,
  TOD_ERR_TRUNCATED = 10,
  TOD_ERR_NOT_FOUND = 11,
  TOD_ERR_CONFLICT = 12,
  TOD_ERR_IO = 13,
  TOD_ERR_UNKNOWN = 99
} tod_status;

typedef struct tod_corpus tod_corpus;
typedef struct tod_vocab tod_vocab;
typedef struct tod_model tod_model;

TOD_API const char* tod_version(void);
TOD_API const char* tod_last_error(void);
TOD_API const char* tod_status_name(tod_status status);
TOD_API void tod_string_free(char* s);

/* corpus */
TOD_API tod_status tod_corpus_synthesize(uint64_t seed, int n_dialogues, const char* config_json,
                                         tod_corpus** out);
TOD_API tod_status tod_corpus_load(const char* path, tod_corpus** out);
TOD_API tod_status tod_corpus_save(const tod_corpus* corpus, const char* path);
TOD_API tod_status tod_corpus_split(const tod_corpus* corpus, double train, double dev,
                                    double test, uint64_t seed, tod_corpus** train_out,
                                    tod_corpus** dev_out, tod_corpus** test_out);
TOD_API size_t tod_corpus_size(const tod_corpus* corpus);
TOD_API void tod_corpus_free(tod_corpus* corpus);

/* tokenizer; the schema placeholders of the corpus become special tokens */
TOD_API tod_status tod_vocab_train(const tod_corpus* corpus, size_t target_size, tod_vocab** out);
TOD_API tod_status tod_vocab_load(const char* path, tod_vocab** out);
TOD_API tod_status tod_vocab_save(const tod_vocab* vocab, const char* path);
TOD_API size_t tod_vocab_size(const tod_vocab* vocab);
TOD_API void tod_vocab_free(tod_vocab* vocab);

/* training; the callback receives one JSON object per epoch */
typedef void (*tod_log_fn)(const char* json_line, void* user);

TOD_API tod_status tod_train(const tod_corpus* train, const tod_corpus* dev, const tod_vocab* vocab,
                             const char* train_config_json, const char* model_config_json,
                             const tod_model* init, tod_log_fn log, void* user, tod_model** out);

/* vocab may be NULL to skip the vocabulary hash check */
TOD_API tod_status tod_model_load(const char* path, const tod_vocab* vocab, tod_model** out);
TOD_API tod_status tod_model_save(const tod_model* model, const char* path);
TOD_API tod_status tod_model_info(const tod_model* model, char** info_json);
TOD_API void tod_model_free(tod_model* model);

/* request: {"context":[{"speaker","text"}...],"belief":{},"db":{},"policy":{}}
 * response: {"text","tokens","logprobs"} */
TOD_API tod_status tod_generate(const tod_model* model, const tod_vocab* vocab,
                                const char* request_json, char** response_json);

/* model == NULL scores the gold responses. table may be NULL. */
TOD_API tod_status tod_evaluate(const tod_model* model, const tod_vocab* vocab,
                                const tod_corpus* test, const char* policy_json,
                                char** report_json, char** table);

/* Blocks until the server stops. */
TOD_API tod_status tod_serve(const char* config_json);

/* Aggregated preferences of a judgment store: {"rows":[...],"table":"..."} */
TOD_API tod_status tod_judge_export(const char* store_path, char** aggregate_json);

#ifdef __cplusplus
}
#endif

#endif
