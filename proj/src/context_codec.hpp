#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace tod {

struct Database;

// domain -> slot -> value. std::map keeps the canonical lexicographic order,
// so serialization never depends on insertion order.
using BeliefState = std::map<std::string, std::map<std::string, std::string>>;

// domain -> number of matching entities
using DbState = std::map<std::string, std::int64_t>;

enum class Speaker { user, system };

struct Utterance {
  Speaker speaker = Speaker::user;
  std::string text;
};

enum class Role : std::uint8_t { user = 0, system = 1 };

struct Span {
  Role role = Role::user;
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
};

// Flat context text plus a role label for every character.
struct ContextText {
  std::string text;
  std::vector<Span> spans;
};

inline constexpr int kDefaultHistoryWindow = 5;

// Drops empty domain blocks; values are kept verbatim.
BeliefState canonicalize(const BeliefState& belief);

std::string serialize_belief(const BeliefState& belief);
std::string serialize_db(const DbState& db);

// Inverse of serialize_belief for belief states whose domain and slot names
// come from the schema and whose values never collide with schema words.
BeliefState parse_belief(const std::string& text, const Database& schema);

ContextText build_context(const std::vector<Utterance>& history,
                          const BeliefState& belief, const DbState& db,
                          int window = kDefaultHistoryWindow);

}  // namespace tod
