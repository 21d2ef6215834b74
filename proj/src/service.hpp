#pragma once

#include <cstdint>
#include <cstdio>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "common.hpp"
#include "corpus.hpp"
#include "decoding.hpp"
#include "json.hpp"
#include "model.hpp"
#include "tokenizer.hpp"

namespace tod {

// --- judgment store ---------------------------------------------------------

struct PairRecord {
  std::string pair_id;
  std::string judge;
  std::string source_a;  // as presented
  std::string source_b;
  std::size_t context = 0;
  bool swapped = false;  // presentation differs from the configured source order
};

struct JudgmentRecord {
  std::string pair_id;
  std::string judge;
  std::string choice;  // "A" or "B"
  std::string timestamp;
};

struct AggregateRow {
  std::string source_1;
  std::string source_2;
  std::size_t count = 0;
  std::size_t wins_1 = 0;

  // "Model 1 | x% | y% | Model 2", percentages "-" when count is 0.
  std::string format() const;
};

struct Aggregate {
  std::vector<AggregateRow> rows;

  nlohmann::json to_json() const;
  std::string table() const;
};

// Append-only JSON-lines file. The first line names the sources and the
// number of contexts; every later line is a served pair or a judgment.
// Appends are flushed and fsynced before returning.
class JudgmentLog {
 public:
  JudgmentLog(const std::string& path, const std::vector<std::string>& tags,
              std::size_t n_contexts);
  ~JudgmentLog();
  JudgmentLog(const JudgmentLog&) = delete;
  JudgmentLog& operator=(const JudgmentLog&) = delete;

  const std::vector<nlohmann::json>& replayed() const { return replayed_; }
  void append(const nlohmann::json& record);

 private:
  std::FILE* file_ = nullptr;
  std::vector<nlohmann::json> replayed_;
};

// Reads a store without opening it for writing.
Aggregate aggregate_store(const std::string& path);

// Pair assignment and judgment bookkeeping. Thread-safe.
class JudgingState {
 public:
  JudgingState(std::vector<std::string> tags, std::size_t n_contexts, const std::string& store_path,
               std::uint64_t seed);

  // The judge's outstanding pair if any, else a fresh one from the least
  // judged source pair; nullopt once the judge has seen every context of
  // every source pair.
  std::optional<PairRecord> next_pair(const std::string& judge);

  // Throws not_found for unknown pairs or pairs served to another judge,
  // conflict when the judge already chose differently.
  JudgmentRecord record(const std::string& pair_id, const std::string& judge,
                        const std::string& choice);

  Aggregate aggregate() const;
  std::size_t judgment_count() const;
  const std::vector<std::string>& tags() const { return tags_; }

 private:
  void apply_pair(const PairRecord& pair);
  void apply_judgment(const JudgmentRecord& j);

  std::vector<std::string> tags_;
  std::size_t n_contexts_;
  JudgmentLog log_;
  Rng rng_;
  mutable std::mutex mutex_;
  std::vector<PairRecord> pairs_;
  std::map<std::string, std::size_t> pair_index_;
  std::map<std::string, JudgmentRecord> judgments_;   // by pair id
  std::map<std::string, std::string> outstanding_;    // judge -> pair id
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> pair_counts_;  // judged, by source pair
  std::map<std::string, std::set<std::pair<std::size_t, std::size_t>>> seen_;  // judge -> {(source pair index, context)}
};

// --- HTTP service -----------------------------------------------------------

struct SourceConfig {
  std::string tag;
  std::string kind = "gold";  // "gold" or "checkpoint"
  std::string checkpoint;
  std::string vocab;
  DecodePolicy policy;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string store;
  std::string corpus;  // judging contexts come from its system turns
  std::size_t max_contexts = 0;  // 0 keeps all
  std::uint64_t seed = 0;
  int history_window = kDefaultHistoryWindow;
  std::vector<SourceConfig> sources;
  // Model behind /v1/generate; defaults to the first checkpoint source.
  std::string generator_checkpoint;
  std::string generator_vocab;

  static ServiceConfig from_json(const nlohmann::json& doc);
};

// Body of a generation request: {context:[{speaker,text}], belief, db, policy}.
struct GenerateRequest {
  std::vector<Utterance> history;
  BeliefState belief;
  DbState db;
  DecodePolicy policy;
};

GenerateRequest parse_generate_request(const nlohmann::json& body);
nlohmann::json generation_to_json(const Generation& gen);

// Placeholders known to `slot_map` or the belief are filled in; others stay.
std::string relexicalize_lenient(const std::string& delex_text, const SlotMap& slot_map,
                                 const BeliefState& belief);

class Service {
 public:
  explicit Service(const ServiceConfig& config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds the configured port (0 picks a free one) and returns it.
  int bind();
  // Serves until stop(); bind() must have succeeded.
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// bind() + run().
void serve(const ServiceConfig& config);

}  // namespace tod
