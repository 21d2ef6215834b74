#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "context_codec.hpp"
#include "json.hpp"

namespace tod {

using SlotMap = std::map<std::string, std::string>;  // placeholder -> surface value
using Record = std::map<std::string, std::string>;   // attribute -> value

struct Database {
  std::map<std::string, std::vector<std::string>> schema;  // domain -> attributes
  std::map<std::string, std::vector<Record>> entities;

  // Entities of `domain` agreeing with every constraint.
  std::int64_t count_matches(const std::string& domain,
                             const std::map<std::string, std::string>& constraints) const;
  DbState db_state(const BeliefState& belief) const;
};

struct Turn {
  Speaker speaker = Speaker::user;
  std::string text;
  // system turns only
  std::string delex_text;
  BeliefState belief;
  DbState db_state;
  SlotMap slot_map;
};

struct Dialogue {
  std::string id;
  std::vector<Turn> turns;
};

struct Goal {
  std::map<std::string, std::map<std::string, std::string>> constraints;
  std::map<std::string, std::set<std::string>> requested;
};

struct Corpus {
  std::vector<Dialogue> dialogues;
  Database db;
  std::map<std::string, Goal> goals;
};

std::string placeholder(const std::string& domain, const std::string& attribute);

struct Delexicalized {
  std::string text;
  SlotMap slot_map;
};

// Replaces belief and database values with `[<domain>_<attribute>]`, longest
// value first, left to right, without overlaps. A match must sit on word
// boundaries. Belief values win over database values of equal length.
Delexicalized delexicalize(const std::string& text, const Database& db,
                           const BeliefState& belief);

std::string relexicalize(const std::string& delex_text, const SlotMap& slot_map);

// Placeholders appearing in `text`, in order of appearance.
std::vector<std::string> find_placeholders(const std::string& text);

void validate(const Corpus& corpus);

Corpus corpus_from_json(const nlohmann::json& doc);
nlohmann::json corpus_to_json(const Corpus& corpus);
Corpus load_corpus(const std::string& path);
void save_corpus(const Corpus& corpus, const std::string& path);

struct SynthDomain {
  std::string name;
  std::map<std::string, std::vector<std::string>> informable;  // slot -> value pool
  std::vector<std::string> requestable;
  std::vector<std::string> entity_names;
  int n_entities = 10;
};

struct SynthConfig {
  std::vector<SynthDomain> domains;
  double two_domain_rate = 0.5;

  static SynthConfig defaults();
  static SynthConfig from_json(const nlohmann::json& doc);
};

Corpus synthesize_corpus(std::uint64_t seed, int n_dialogues,
                         const SynthConfig& config = SynthConfig::defaults());

struct Splits {
  Corpus train;
  Corpus dev;
  Corpus test;
};

struct SplitRatios {
  double train = 0.8;
  double dev = 0.1;
  double test = 0.1;
};

Splits split(const Corpus& corpus, SplitRatios ratios, std::uint64_t seed);

}  // namespace tod
