#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"
#include "corpus.hpp"
#include "json.hpp"
#include "model.hpp"
#include "tokenizer.hpp"

namespace tod {

struct TrainConfig {
  int batch_size = 24;
  double learning_rate = 1e-5;
  int num_candidates = 2;
  double lm_weight = 2.0;
  double cls_weight = 1.0;
  int epochs = 1;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;  // infinity disables clipping
  int history_window = kDefaultHistoryWindow;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& doc);
};

// One system turn of a dialogue, ready for the model.
struct TrainingExample {
  std::string dialogue_id;
  TokenSequence context;  // ends with the `<system>` prompt
  std::vector<TokenId> gold_reply;
  std::string gold_text;
};

std::vector<TrainingExample> build_examples(const Corpus& corpus, const Vocab& vocab,
                                            int history_window);

// Text the tokenizer learns from: user turns verbatim, system turns
// delexicalized.
std::vector<std::string> tokenizer_texts(const Corpus& corpus);
// Every `[<domain>_<attribute>]` of the database schema.
std::vector<std::string> schema_placeholders(const Database& db);

// History of utterances preceding system turn `turn`, with system turns in
// their delexicalized form.
std::vector<Utterance> history_before(const Dialogue& dialogue, std::size_t turn);

// Drops the oldest context tokens (keeping `<bos>`) until `seq` has at most
// `max_len` tokens.
void truncate_context(TokenSequence& seq, std::size_t max_len);

// Delexicalized system replies that may serve as distractors.
struct ReplyPool {
  struct Entry {
    std::string dialogue_id;
    std::string text;
    std::vector<TokenId> ids;
  };
  std::vector<Entry> entries;

  static ReplyPool from_corpus(const Corpus& corpus, const Vocab& vocab);
  void append(const ReplyPool& other);
};

struct BatchItem {
  std::size_t example = 0;
  std::vector<std::size_t> distractors;  // pool entry indices
  std::size_t gold_index = 0;
  std::vector<TokenSequence> candidates;  // context ++ reply ++ <eos>
  std::size_t reply_begin = 0;            // first reply position in the gold candidate
};

struct Batch {
  std::vector<BatchItem> items;
};

Batch make_batch(std::span<const TrainingExample> examples, const ReplyPool& pool,
                 int num_candidates, int context_limit, Rng& rng);

struct LossBreakdown {
  double total = 0.0;
  double lm = 0.0;
  double cls = 0.0;
  std::size_t lm_tokens = 0;
  std::size_t correct = 0;  // items whose gold candidate scored highest
};

// total = lm_weight * L_lm + cls_weight * L_cls. L_lm is the mean negative
// log-likelihood over every gold-reply token of the batch, L_cls the mean
// cross-entropy of the candidate classifier against the gold index.
// When `grads` is given, gradients of `total` are accumulated into it.
template <typename Real>
LossBreakdown combined_loss(const Params<Real>& p, const Batch& batch, const TrainConfig& config,
                            Params<Real>* grads = nullptr);

template <typename Real>
double gradient_norm(Params<Real>& grads);

struct AdamState {
  Params<float> m;
  Params<float> v;
  std::uint64_t step = 0;

  static AdamState zeros(const ModelConfig& config);
};

struct StepStats {
  double total = 0.0;
  double lm = 0.0;
  double cls = 0.0;
  double grad_norm = 0.0;
};

StepStats train_step(Params<float>& p, const Batch& batch, const TrainConfig& config,
                     AdamState& state);

struct Checkpoint {
  ModelConfig config;
  std::string vocab_hash;
  Params<float> params;
  std::uint64_t step = 0;
  std::string rng_state;
  nlohmann::json metadata = nlohmann::json::object();
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
// With `expected_vocab_hash`, a checkpoint trained against another vocab is
// rejected.
Checkpoint load_checkpoint(const std::string& path,
                           std::optional<std::string> expected_vocab_hash = std::nullopt);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_perplexity = std::numeric_limits<double>::quiet_NaN();
  double dev_accuracy = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
};

struct DevMetrics {
  double perplexity = 0.0;
  double accuracy = 0.0;
};

DevMetrics dev_metrics(const Params<float>& p, std::span<const TrainingExample> examples,
                       const ReplyPool& pool, int num_candidates, std::uint64_t seed);

struct TrainResult {
  Checkpoint checkpoint;  // best dev perplexity
  std::vector<EpochStats> history;
};

using TrainLogger = std::function<void(const EpochStats&)>;

TrainResult train(const Corpus& train_set, const Corpus& dev_set, const Vocab& vocab,
                  const TrainConfig& train_config, const ModelConfig& model_config,
                  const TrainLogger& log = {}, const Params<float>* initial = nullptr);

}  // namespace tod
